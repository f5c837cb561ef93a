#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ooolab/blas.hpp"
#include "ooolab/tape.hpp"
#include "ooolab/tensor.hpp"

namespace ooolab {

struct DenseLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

// Plain fully-connected stack; rectifier on hidden layers, linear output
// unless relu_output is requested (relation-network bodies want it).
struct Mlp {
  std::vector<DenseLayer> layers;
  bool relu_output = false;

  std::size_t input_dim() const { return layers.front().w.shape[0]; }
  std::size_t output_dim() const { return layers.back().w.shape[1]; }
};

inline Mlp mlp_init(const std::vector<std::size_t>& widths, Rng& rng,
                    bool relu_output = false) {
  if (widths.size() < 2) throw contract_violation("mlp_init: need >= 2 widths");
  Mlp mlp;
  mlp.relu_output = relu_output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer l;
    l.w = Tensor::randn({widths[i], widths[i + 1]}, rng,
                        std::sqrt(2.0 / (double)widths[i]));
    l.b = Tensor::zeros({widths[i + 1]});
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

// Tape handles for the parameters of one MLP.
struct MlpNodes {
  std::vector<std::pair<NodeId, NodeId>> layers;  // (w, b)
};

inline MlpNodes mlp_leaves(Tape& tape, Mlp& mlp, bool trainable = true) {
  MlpNodes nodes;
  for (auto& l : mlp.layers) {
    Tensor w = l.w, b = l.b;
    w.requires_grad = trainable;
    b.requires_grad = trainable;
    nodes.layers.emplace_back(tape.input(std::move(w)), tape.input(std::move(b)));
  }
  return nodes;
}

// Affine + rectifier composition, recorded on the tape.
inline NodeId mlp_apply(Tape& tape, const MlpNodes& nodes, NodeId x,
                        bool relu_output = false) {
  NodeId h = x;
  for (std::size_t i = 0; i < nodes.layers.size(); ++i) {
    h = tape.add_rowvec(tape.matmul(h, nodes.layers[i].first), nodes.layers[i].second);
    if (i + 1 < nodes.layers.size() || relu_output) h = tape.relu(h);
  }
  return h;
}

// Inference-only forward pass for frozen parameters: in [n, d] row-major,
// returns [n, out]. No tape, no gradients; used by the metric suite where
// encoding throughput matters.
inline std::vector<double> mlp_forward(const Mlp& mlp, const double* in,
                                       std::size_t n) {
  std::vector<double> cur(in, in + n * mlp.input_dim());
  std::size_t cur_w = mlp.input_dim();
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const DenseLayer& l = mlp.layers[i];
    if (l.w.shape[0] != cur_w)
      throw contract_violation("mlp_forward: width mismatch at layer " +
                               std::to_string(i));
    std::size_t out_w = l.w.shape[1];
    std::vector<double> next(n * out_w);
    for (std::size_t r = 0; r < n; ++r)
      std::copy(l.b.values.begin(), l.b.values.end(), next.begin() + r * out_w);
    dgemm(false, false, (int)n, (int)out_w, (int)cur_w, 1.0, cur.data(), (int)cur_w,
          l.w.values.data(), (int)out_w, 1.0, next.data(), (int)out_w);
    bool relu = (i + 1 < mlp.layers.size()) || mlp.relu_output;
    if (relu)
      for (double& v : next) v = v > 0.0 ? v : 0.0;
    cur = std::move(next);
    cur_w = out_w;
  }
  return cur;
}

// Flat list of parameter tensors, encoder first; pairs with gradient maps.
inline std::vector<Tensor*> mlp_params(Mlp& mlp) {
  std::vector<Tensor*> out;
  for (auto& l : mlp.layers) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  return out;
}

}  // namespace ooolab
