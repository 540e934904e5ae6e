#pragma once

#include <cmath>
#include <limits>

// Scalar helpers for the standard normal distribution. The inverse Mills
// ratio R(x) = phi(x)/Phi(x) and the truncated-normal variance factor
// 1 - x R(x) - R(x)^2 both suffer from cancellation and underflow in the
// lower tail, where the direct ratio is 0/0 in double precision well before
// x reaches -40. Below the crossover the Laplace continued fraction for the
// Mills ratio is used instead.

namespace ep {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

namespace detail {

// Crossover between the direct ratio and the continued fraction.
inline constexpr double kMillsTailCrossover = -5.0;

// Tail of the Laplace continued fraction: for t > 0,
//   R(-t) = t + v(t),   v(t) = 1 / (t + 2 / (t + 3 / (t + ...))).
// Converges to full double precision for t >= 5 at this depth.
template <typename Scalar>
Scalar mills_cf_tail(Scalar t) {
  Scalar v = Scalar(0);
  for (int k = 64; k >= 1; --k) v = Scalar(k) / (t + v);
  return v;
}

}  // namespace detail

template <typename Scalar>
Scalar norm_pdf(Scalar x) {
  return std::exp(Scalar(-0.5) * x * x - Scalar(0.5) * Scalar(kLog2Pi));
}

template <typename Scalar>
Scalar norm_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x * Scalar(M_SQRT1_2));
}

/// log N(x; mean, var)
template <typename Scalar>
Scalar log_norm_pdf(Scalar x, Scalar mean, Scalar var) {
  const Scalar d = x - mean;
  return Scalar(-0.5) * (d * d / var + std::log(var) + Scalar(kLog2Pi));
}

/// Inverse Mills ratio R(x) = phi(x)/Phi(x), valid on the whole real line.
template <typename Scalar>
Scalar inverse_mills(Scalar x) {
  if (x < Scalar(detail::kMillsTailCrossover)) {
    const Scalar t = -x;
    return t + detail::mills_cf_tail(t);
  }
  return norm_pdf(x) / norm_cdf(x);
}

/// Variance of the standard normal truncated to [x, +inf), i.e.
/// 1 - x R(x) - R(x)^2. Evaluated so that the deep-tail limit 1/x^2 keeps
/// full relative precision.
template <typename Scalar>
Scalar truncnorm_var_factor(Scalar x) {
  if (x < Scalar(detail::kMillsTailCrossover)) {
    const Scalar t = -x;
    const Scalar v = detail::mills_cf_tail(t);
    return Scalar(1) - t * v - v * v;
  }
  const Scalar r = norm_pdf(x) / norm_cdf(x);
  return Scalar(1) - r * (r + x);
}

/// log Phi(x), stable in both tails.
template <typename Scalar>
Scalar norm_logcdf(Scalar x) {
  if (x < Scalar(detail::kMillsTailCrossover)) {
    const Scalar t = -x;
    const Scalar r = t + detail::mills_cf_tail(t);
    return Scalar(-0.5) * x * x - Scalar(0.5) * Scalar(kLog2Pi) - std::log(r);
  }
  if (x > Scalar(5)) {
    // Phi(x) = 1 - Phi(-x); Phi(-x) <= 3e-7 here.
    return std::log1p(-norm_cdf(-x));
  }
  return std::log(norm_cdf(x));
}

/// log(exp(a) + exp(b)) without overflow; -inf inputs allowed.
template <typename Scalar>
Scalar log_sum_exp(Scalar a, Scalar b) {
  const Scalar m = std::max(a, b);
  if (m == -std::numeric_limits<Scalar>::infinity()) return m;
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace ep
