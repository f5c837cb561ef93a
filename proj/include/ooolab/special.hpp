#pragma once

#include <cmath>

#include "ooolab/errors.hpp"

namespace ooolab {

namespace detail {

// Continued fraction for the complementary error integral (modified Lentz):
//   erfc(t) = exp(-t^2)/sqrt(pi) * K(t),
//   K(t) = 1/(t + (1/2)/(t + (2/2)/(t + (3/2)/(t + ...))))
// Converges fast for t >= 2.
inline double erfc_cf(double t) {
  double f = 1e-300, c = f, d = 0.0;
  for (int n = 1; n < 400; ++n) {
    double a = (n == 1) ? 1.0 : 0.5 * (n - 1);
    d = t + a * d;
    if (d == 0.0) d = 1e-300;
    c = t + a / c;
    if (c == 0.0) c = 1e-300;
    d = 1.0 / d;
    double delta = c * d;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-17) break;
  }
  return f;
}

}  // namespace detail

// log Phi(x), the log of the standard normal CDF, stable on [-40, 40] and far
// beyond. Two regimes:
//   x >= -2.8 : log(0.5 erfc(-x/sqrt(2))) directly (erfc >= 5e-3 there)
//   x <  -2.8 : -t^2 + log(K(t)) - log(2 sqrt(pi)) with t = -x/sqrt(2), so the
//               value decays like -x^2/2 instead of underflowing to -inf.
inline double log_std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw contract_violation("log_std_normal_cdf: non-finite x");
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  if (x >= -2.8) return std::log(0.5 * std::erfc(-x * inv_sqrt2));
  const double t = -x * inv_sqrt2;
  constexpr double log_2_sqrt_pi = 1.2655121234846453965;  // log(2 sqrt(pi))
  return -t * t + std::log(detail::erfc_cf(t)) - log_2_sqrt_pi;
}

// d/dx log Phi(x) = phi(x)/Phi(x), stable for all finite x (≈ -x in the far
// left tail).
inline double log_std_normal_cdf_grad(double x) {
  constexpr double log_inv_sqrt_2pi = -0.9189385332046727418;
  return std::exp(log_inv_sqrt_2pi - 0.5 * x * x - log_std_normal_cdf(x));
}

}  // namespace ooolab
