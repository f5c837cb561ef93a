#pragma once

#include <stdexcept>
#include <string>

namespace ooolab {

// Precondition or shape violation by the caller.
class contract_violation : public std::invalid_argument {
 public:
  explicit contract_violation(const std::string& msg) : std::invalid_argument(msg) {}
};

// A forward or backward pass produced a non-finite value. Carries the
// offending tape node when raised inside the tape.
class numeric_failure : public std::runtime_error {
 public:
  explicit numeric_failure(const std::string& msg, long node_id = -1, long step = -1)
      : std::runtime_error(msg), node_id(node_id), step(step) {}
  long node_id;
  long step;
};

// Invalid configuration (factor cardinalities, sweep grids, zero importances).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed persisted data (checkpoints, datasets).
class format_error : public std::runtime_error {
 public:
  explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

class version_error : public format_error {
 public:
  explicit version_error(const std::string& msg) : format_error(msg) {}
};

// Rejection budget exhausted while generating a puzzle.
class generation_error : public std::runtime_error {
 public:
  explicit generation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Encoder collapsed to the point where a metric is undefined.
class degenerate_encoder_error : public std::runtime_error {
 public:
  explicit degenerate_encoder_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Rank correlation of a constant sequence.
class undefined_correlation_error : public std::runtime_error {
 public:
  explicit undefined_correlation_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ooolab
