#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ooolab/errors.hpp"
#include "ooolab/rng.hpp"

namespace ooolab {

// Dense row-major f64 tensor. Everything trainable at desk scale is 64-bit;
// gradient checks get four extra digits of headroom for free.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;

  Tensor() = default;

  Tensor(std::vector<std::size_t> s, std::vector<double> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (values.size() != numel_of(shape))
      throw contract_violation("Tensor: value count does not match shape");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<std::size_t> s, Rng& rng, double stddev = 1.0) {
    std::size_t n = numel_of(s);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = stddev * rng.normal();
    return Tensor(std::move(s), std::move(v));
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

}  // namespace ooolab
