#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ooolab/tensor.hpp"

namespace testutil {

// Independent high-precision oracle for log Phi(x): long-double erfc where it
// does not underflow, an asymptotic tail series beyond. Different algorithm
// from the library path (glibc erfcl / series vs continued fraction).
inline long double log_phi_oracle(long double x) {
  const long double inv_sqrt2 = 0.70710678118654752440L;
  long double t = -x * inv_sqrt2;
  if (t < 100.0L) return logl(0.5L * erfcl(t));
  const long double sqrt_pi = 1.77245385090551602730L;
  long double t2 = t * t;
  long double s = 1.0L - 1.0L / (2.0L * t2) + 3.0L / (4.0L * t2 * t2) -
                  15.0L / (8.0L * t2 * t2 * t2);
  return -t2 + logl(s / (t * sqrt_pi)) - logl(2.0L);
}

// Central finite differences against analytic gradients over every entry of
// every parameter tensor. `loss` re-evaluates the objective at the current
// parameter values; `grads` returns analytic gradients aligned with params.
// Error is |analytic - fd| / max(1, |analytic|, |fd|).
inline double max_grad_err(const std::function<double()>& loss,
                           const std::function<std::vector<ooolab::Tensor>()>& grads,
                           const std::vector<ooolab::Tensor*>& params,
                           double h = 1e-5) {
  std::vector<ooolab::Tensor> analytic = grads();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->values.size(); ++i) {
      double saved = params[p]->values[i];
      params[p]->values[i] = saved + h;
      double up = loss();
      params[p]->values[i] = saved - h;
      double down = loss();
      params[p]->values[i] = saved;
      double fd = (up - down) / (2.0 * h);
      double an = analytic[p].values[i];
      double err = std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace testutil
