#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ooolab/errors.hpp"
#include "ooolab/tensor.hpp"

namespace ooolab {

// Adam accumulator state. Moment buffers are created lazily on the first
// step so the state can be declared before the parameter list is known.
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
};

// Bias-corrected adaptive-moment update, applied in place.
inline void adam_step(std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads,
                      OptimizerState& state) {
  if (params.size() != grads.size())
    throw contract_violation("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape));
      state.v.push_back(Tensor::zeros(p->shape));
    }
  }
  if (state.m.size() != params.size())
    throw contract_violation("adam_step: state size mismatch");
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, (double)state.step);
  double bc2 = 1.0 - std::pow(state.beta2, (double)state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i]))
      throw contract_violation("adam_step: shape mismatch at parameter " +
                               std::to_string(i));
    auto& m = state.m[i].values;
    auto& v = state.v[i].values;
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g.values[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g.values[k] * g.values[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p.values[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace ooolab
