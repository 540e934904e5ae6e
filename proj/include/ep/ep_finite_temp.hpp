#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ep/ep_core.hpp"

// Finite-temperature EP over the full N + M variables: the hard constraint
// subspace is replaced by the quadratic coupling beta * ||y - X w||^2, so the
// Gaussian approximation has precision beta * E^{-1} + diag(1/d) with
//
//   E^{-1} = [ X^T X  -X^T ]
//            [ -X       I  ].
//
// This is the correctness reference, not the performance path: every sweep
// factorizes the full (N + M) matrix.

namespace ep {

template <typename Scalar>
struct FiniteTempConfig {
  Scalar beta = Scalar(1);
  EPConfig<Scalar> base;

  void validate() const {
    if (!(beta > Scalar(0)) || !std::isfinite(beta))
      throw std::invalid_argument("beta must be positive and finite");
    base.validate();
  }
};

template <typename Scalar>
struct FtWorkspace {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mat energy;     // E^{-1}, built once per design matrix
  Mat prec;       // (N+M) x (N+M)
  Mat solve_buf;  // identity solve for the marginal variances
  Eigen::LLT<Mat> llt;
  Vec h_bar;
  SweepBuffers<Scalar> sw;
  long factorizations = 0;

  void init(const DesignMatrix<Scalar>& x) {
    const Eigen::Index n = x.n();
    const Eigen::Index m = x.m();
    const Eigen::Index k = n + m;
    energy.resize(k, k);
    energy.topLeftCorner(n, n).noalias() = x.matrix().transpose() * x.matrix();
    energy.topRightCorner(n, m) = -x.matrix().transpose();
    energy.bottomLeftCorner(m, n) = -x.matrix();
    energy.bottomRightCorner(m, m).setIdentity();
    prec.resize(k, k);
    solve_buf.resize(k, k);
    h_bar.resize(k);
    sw.resize(k);
  }
};

/// Full-dimensional Gaussian refresh: one (N+M) Cholesky per call.
template <typename Scalar>
void ft_assemble_into(const SiteParams<Scalar>& site, const FiniteTempConfig<Scalar>& cfg,
                      FtWorkspace<Scalar>& ws) {
  ws.prec = cfg.beta * ws.energy;
  ws.prec.diagonal() += site.d.cwiseInverse();

  ws.llt.compute(ws.prec);
  ++ws.factorizations;
  if (ws.llt.info() != Eigen::Success)
    throw CholeskyError("finite-temperature precision is not numerically SPD",
                        detail::find_failing_pivot(ws.prec));

  ws.h_bar = ws.llt.solve(site.a.cwiseQuotient(site.d).eval());
  ws.solve_buf.setIdentity();
  ws.llt.matrixL().solveInPlace(ws.solve_buf);
  ws.sw.marg_var = ws.solve_buf.colwise().squaredNorm();
  ws.sw.marg_mean = ws.h_bar;
}

/// Allocating variant mirroring assemble_weight_precision: marginal means and
/// variances over all N + M coordinates of the full Gaussian.
template <typename Scalar>
GaussianSummary<Scalar> ft_assemble(const DesignMatrix<Scalar>& x, const SiteParams<Scalar>& site,
                                    const FiniteTempConfig<Scalar>& cfg) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  cfg.validate();
  FtWorkspace<Scalar> ws;
  ws.init(x);
  ft_assemble_into(site, cfg, ws);
  GaussianSummary<Scalar> g;
  g.sigma_w = ws.llt.solve(Mat::Identity(x.n() + x.m(), x.n() + x.m()))
                  .topLeftCorner(x.n(), x.n());
  g.w_bar = ws.h_bar.head(x.n());
  g.marg_mean = ws.sw.marg_mean;
  g.marg_var = ws.sw.marg_var;
  g.log_det_sigma_w = -2 * ws.llt.matrixLLT().diagonal().array().log().sum();
  return g;
}

/// Damped parallel EP with the finite-temperature Gaussian; cavities and site
/// refreshes reuse the zero-temperature sweep.
template <typename Scalar>
EPResult<Scalar> ft_run(const DesignMatrix<Scalar>& x,
                        const std::vector<SitePriorSpec<Scalar>>& priors,
                        const FiniteTempConfig<Scalar>& cfg,
                        const SiteParams<Scalar>* init = nullptr) {
  cfg.validate();
  const Eigen::Index n = x.n();
  const Eigen::Index m = x.m();
  if (static_cast<Eigen::Index>(priors.size()) != n + m)
    throw std::invalid_argument("need one site prior per variable");

  FtWorkspace<Scalar> ws;
  ws.init(x);
  SiteParams<Scalar> state = init ? *init : SiteParams<Scalar>::neutral(n + m);
  if (!init) state.d.setConstant(cfg.base.init_d);

  EPResult<Scalar> res;
  res.n = n;
  res.m = m;
  for (int iter = 1; iter <= cfg.base.max_iter; ++iter) {
    ft_assemble_into(state, cfg, ws);
    const Scalar eps = sweep_sites(priors, cfg.base, state, ws.sw);
    res.iterations = iter;
    res.eps_final = eps;
    if (eps < cfg.base.eps_stop) {
      res.converged = true;
      break;
    }
  }

  res.tilted_mean = ws.sw.tilt_mean;
  res.tilted_second = ws.sw.tilt_second;
  res.tilted_var = ws.sw.tilt_second - ws.sw.tilt_mean.cwiseAbs2();
  res.site = std::move(state);
  res.cav_mean = ws.sw.cav_mean;
  res.cav_var = ws.sw.cav_var;
  res.clamp_cavity = ws.sw.clamp_cavity;
  res.clamp_site = ws.sw.clamp_site;
  res.factorizations = ws.factorizations;
  return res;
}

}  // namespace ep
