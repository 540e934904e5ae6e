#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "ep/normal.hpp"

// Gradients of the EP free energy in the prior hyperparameters, taken at
// fixed cavity moments, and the projected gradient-descent step. Only the
// site log-partitions depend explicitly on (rho, eta), so both gradients are
// sums of per-site terms over the corresponding block.

namespace ep {

template <typename Scalar>
struct HyperParams {
  Scalar rho;
  Scalar lambda;
  Scalar eta;
  Scalar lr_rho = Scalar(1e-5);
  Scalar lr_eta = Scalar(1e-5);
};

// Clamp bounds keeping the learned parameters strictly inside their domains.
inline constexpr double kRhoMin = 1e-4;
inline constexpr double kRhoMax = 1.0 - 1e-4;
inline constexpr double kEtaMin = 0.5 + 1e-6;
inline constexpr double kEtaMax = 1.0 - 1e-6;

/// dF/drho = sum_k (N_spike - N_slab) / Z_k over the weight-site cavities,
/// with N_slab the density of the slab-cavity convolution. lambda is a
/// precision throughout.
template <typename Scalar, typename V1, typename V2>
Scalar grad_rho(const Eigen::MatrixBase<V1>& cav_mean, const Eigen::MatrixBase<V2>& cav_var,
                Scalar rho, Scalar lambda) {
  Scalar grad(0);
  for (Eigen::Index k = 0; k < cav_mean.size(); ++k) {
    const Scalar mu = cav_mean[k];
    const Scalar sigma = cav_var[k];
    const Scalar l_spike = log_norm_pdf(mu, Scalar(0), sigma);
    const Scalar l_slab = log_norm_pdf(mu, Scalar(0), Scalar(1) / lambda + sigma);
    // (1 - r) / ((1-rho) + rho r), evaluated with the larger term factored out.
    if (l_spike >= l_slab) {
      const Scalar r = std::exp(l_slab - l_spike);
      grad += (Scalar(1) - r) / ((Scalar(1) - rho) + rho * r);
    } else {
      const Scalar r = std::exp(l_spike - l_slab);
      grad += (r - Scalar(1)) / ((Scalar(1) - rho) * r + rho);
    }
  }
  return grad;
}

/// dF/deta = sum_k -2 erf(x_k) / (1 + (2 eta - 1) erf(x_k)) over the
/// example-site cavities, x_k = mu_k / sqrt(2 sigma_k).
template <typename Scalar, typename V1, typename V2>
Scalar grad_eta(const Eigen::MatrixBase<V1>& cav_mean, const Eigen::MatrixBase<V2>& cav_var,
                Scalar eta) {
  Scalar grad(0);
  for (Eigen::Index k = 0; k < cav_mean.size(); ++k) {
    const Scalar e = std::erf(cav_mean[k] / std::sqrt(Scalar(2) * cav_var[k]));
    const Scalar denom = std::max(Scalar(1) + (Scalar(2) * eta - Scalar(1)) * e, Scalar(1e-300));
    grad += Scalar(-2) * e / denom;
  }
  return grad;
}

/// One projected gradient-descent step on (rho, eta).
template <typename Scalar>
HyperParams<Scalar> hyper_step(const HyperParams<Scalar>& hyper, Scalar g_rho, Scalar g_eta) {
  HyperParams<Scalar> out = hyper;
  out.rho = std::clamp(hyper.rho - hyper.lr_rho * g_rho, Scalar(kRhoMin), Scalar(kRhoMax));
  out.eta = std::clamp(hyper.eta - hyper.lr_eta * g_eta, Scalar(kEtaMin), Scalar(kEtaMax));
  return out;
}

}  // namespace ep
