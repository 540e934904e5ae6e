#pragma once

#include <variant>
#include <vector>

#include "ep/moments.hpp"

namespace ep {

/// Exact site measure attached to one variable: spike-and-slab for weight
/// sites, theta or theta-mixture for example sites.
template <typename Scalar>
using SitePriorSpec =
    std::variant<SpikeSlabParams<Scalar>, ThetaParams, ThetaMixtureParams<Scalar>>;

template <typename Scalar>
MomentTriple<Scalar> tilted_moments(const SitePriorSpec<Scalar>& prior,
                                    const CavityParams<Scalar>& cav) {
  return std::visit(
      [&](const auto& p) -> MomentTriple<Scalar> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SpikeSlabParams<Scalar>>)
          return spike_slab_moments(cav, p);
        else if constexpr (std::is_same_v<P, ThetaParams>)
          return theta_moments(cav);
        else
          return theta_mixture_moments(cav, p);
      },
      prior);
}

/// Homogeneous block layout: n spike-and-slab weight sites followed by
/// m example sites sharing one pseudoprior.
template <typename Scalar>
std::vector<SitePriorSpec<Scalar>> make_site_priors(
    int n, int m, const SpikeSlabParams<Scalar>& weight_prior,
    const SitePriorSpec<Scalar>& example_prior) {
  std::vector<SitePriorSpec<Scalar>> priors;
  priors.reserve(static_cast<std::size_t>(n + m));
  for (int i = 0; i < n; ++i) priors.push_back(weight_prior);
  for (int i = 0; i < m; ++i) priors.push_back(example_prior);
  return priors;
}

}  // namespace ep
