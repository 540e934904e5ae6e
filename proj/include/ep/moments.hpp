#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ep/errors.hpp"
#include "ep/normal.hpp"

// Closed-form log-partition, mean and second moment of the univariate tilted
// distributions psi(h) * N(h; mu, sigma) for the three site measures used by
// the EP engine: spike-and-slab on weight sites, half-line indicator and
// two-sided indicator mixture on example sites. Everything is evaluated in
// log space; the boundary cases (rho in {0,1}, eta in {1/2, 1}) take explicit
// branches instead of limits.

namespace ep {

/// Gaussian cavity marginal: mean mu, variance sigma.
template <typename Scalar>
struct CavityParams {
  Scalar mu;
  Scalar sigma;
};

/// Mixture of a point mass at zero (weight 1-rho) and a centered Gaussian
/// slab with precision lambda.
template <typename Scalar>
struct SpikeSlabParams {
  Scalar rho;
  Scalar lambda;
};

/// Half-line indicator on h >= 0.
struct ThetaParams {};

/// eta on h >= 0, (1-eta) on h < 0. eta below 1/2 is excluded: flipping the
/// labels maps eta to 1-eta, so the representative is always >= 1/2.
template <typename Scalar>
struct ThetaMixtureParams {
  Scalar eta;
};

template <typename Scalar>
struct MomentTriple {
  Scalar log_z;
  Scalar mean;
  Scalar second;

  Scalar variance() const { return second - mean * mean; }
};

namespace detail {

template <typename Scalar>
void check_cavity(const CavityParams<Scalar>& cav) {
  if (!(cav.sigma > Scalar(0)) || !std::isfinite(cav.sigma) || !std::isfinite(cav.mu))
    throw std::invalid_argument("cavity parameters must be finite with sigma > 0");
}

}  // namespace detail

template <typename Scalar>
MomentTriple<Scalar> spike_slab_moments(const CavityParams<Scalar>& cav,
                                        const SpikeSlabParams<Scalar>& prior) {
  detail::check_cavity(cav);
  if (!(prior.rho >= Scalar(0)) || !(prior.rho <= Scalar(1)) || !(prior.lambda > Scalar(0)))
    throw std::invalid_argument("spike-and-slab requires rho in [0,1], lambda > 0");

  const Scalar mu = cav.mu;
  const Scalar sigma = cav.sigma;

  // log of the spike and slab contributions to Z.
  const Scalar log_spike = log_norm_pdf(mu, Scalar(0), sigma);
  const Scalar slab_var = Scalar(1) / prior.lambda + sigma;
  const Scalar log_slab = log_norm_pdf(mu, Scalar(0), slab_var);

  // Posterior moments of the slab component (product of two Gaussians).
  const Scalar shrink = Scalar(1) + prior.lambda * sigma;
  const Scalar slab_mean = mu / shrink;
  const Scalar slab_post_var = sigma / shrink;

  if (prior.rho == Scalar(0)) {
    if (!std::isfinite(log_spike))
      throw DegeneratePartition("spike-and-slab partition underflowed to zero");
    return {log_spike, Scalar(0), Scalar(0)};
  }
  if (prior.rho == Scalar(1)) {
    if (!std::isfinite(log_slab))
      throw DegeneratePartition("spike-and-slab partition underflowed to zero");
    return {log_slab, slab_mean, slab_post_var + slab_mean * slab_mean};
  }

  const Scalar l_spike = std::log1p(-prior.rho) + log_spike;
  const Scalar l_slab = std::log(prior.rho) + log_slab;
  const Scalar log_z = log_sum_exp(l_spike, l_slab);
  if (!std::isfinite(log_z))
    throw DegeneratePartition("spike-and-slab partition underflowed to zero");

  const Scalar p_slab = Scalar(1) / (Scalar(1) + std::exp(l_spike - l_slab));
  return {log_z, p_slab * slab_mean, p_slab * (slab_post_var + slab_mean * slab_mean)};
}

template <typename Scalar>
MomentTriple<Scalar> theta_moments(const CavityParams<Scalar>& cav) {
  detail::check_cavity(cav);

  const Scalar sd = std::sqrt(cav.sigma);
  const Scalar alpha = cav.mu / sd;
  const Scalar r = inverse_mills(alpha);

  const Scalar mean = cav.mu + sd * r;
  const Scalar var = cav.sigma * truncnorm_var_factor(alpha);
  return {norm_logcdf(alpha), mean, var + mean * mean};
}

template <typename Scalar>
MomentTriple<Scalar> theta_mixture_moments(const CavityParams<Scalar>& cav,
                                           const ThetaMixtureParams<Scalar>& prior) {
  detail::check_cavity(cav);
  if (!(prior.eta >= Scalar(0.5)) || !(prior.eta <= Scalar(1)))
    throw std::invalid_argument("theta mixture requires eta in [1/2, 1]");

  if (prior.eta == Scalar(1)) return theta_moments(cav);
  if (prior.eta == Scalar(0.5)) {
    // Uninformative mixture: the tilted distribution is the cavity itself.
    return {std::log(Scalar(0.5)), cav.mu, cav.mu * cav.mu + cav.sigma};
  }

  const Scalar x = cav.mu / std::sqrt(Scalar(2) * cav.sigma);
  // denom = 2 Z; bounded away from zero for eta < 1.
  const Scalar denom = prior.eta * std::erfc(-x) + (Scalar(1) - prior.eta) * std::erfc(x);
  const Scalar corr = std::sqrt(Scalar(2) * cav.sigma / Scalar(M_PI)) *
                      (Scalar(2) * prior.eta - Scalar(1)) * std::exp(-x * x) / denom;

  const Scalar mean = cav.mu + corr;
  const Scalar var = cav.sigma - corr * mean;
  return {std::log(Scalar(0.5) * denom), mean, var + mean * mean};
}

}  // namespace ep
