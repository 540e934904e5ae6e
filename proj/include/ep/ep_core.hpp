#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "ep/design.hpp"
#include "ep/errors.hpp"
#include "ep/hyper.hpp"
#include "ep/site_priors.hpp"

// Zero-temperature expectation propagation on the constraint subspace
// y = X w. Each sweep performs exactly one N x N Cholesky factorization;
// cavity moments for all N + M sites come from the marginal moments through
// the rank-one downdate rule, and all site parameters are refreshed in
// parallel from the tilted moments, damped in natural-parameter space.

namespace ep {

template <typename Scalar>
struct EPConfig {
  Scalar damping = Scalar(0.99);  // fraction of old natural parameters retained
  Scalar eps_stop = Scalar(1e-4);
  int max_iter = 50000;
  Scalar d_max = Scalar(1e12);
  Scalar var_floor = Scalar(1e-12);
  // Initial site variance. Vague sites keep the early sweeps data-driven;
  // tight initial sites let the sparsity prior freeze weights before the
  // constraints have accumulated any evidence.
  Scalar init_d = Scalar(1e4);

  void validate() const {
    if (!(damping >= Scalar(0) && damping < Scalar(1)))
      throw std::invalid_argument("damping must lie in [0, 1)");
    if (!(eps_stop > Scalar(0))) throw std::invalid_argument("eps_stop must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
    if (!(d_max > 0) || !(var_floor > 0) || !(init_d > 0))
      throw std::invalid_argument("d_max, var_floor and init_d must be positive");
  }
};

/// Means and variances of the Gaussian site factors, weight block first.
/// Variances may be negative (sites with precision below the cavity's); the
/// assembled weight-space precision must stay positive definite.
template <typename Scalar>
struct SiteParams {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec a;
  Vec d;

  static SiteParams neutral(Eigen::Index k) { return {Vec::Zero(k), Vec::Ones(k)}; }
};

/// Marginal summary of the Gaussian approximation.
template <typename Scalar>
struct GaussianSummary {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Mat sigma_w;    // N x N weight-space covariance
  Vec w_bar;      // N
  Vec marg_mean;  // N + M
  Vec marg_var;   // N + M
  Scalar log_det_sigma_w = 0;
};

template <typename Scalar>
struct CavitySummary {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec cav_mean;
  Vec cav_var;
};

template <typename Scalar>
struct EPResult {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  bool converged = false;
  int iterations = 0;
  Scalar eps_final = std::numeric_limits<Scalar>::infinity();
  Vec tilted_mean;  // N + M
  Vec tilted_var;
  Vec tilted_second;
  SiteParams<Scalar> site;
  Vec cav_mean;
  Vec cav_var;
  Eigen::Index n = 0, m = 0;
  Scalar rho_final = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar eta_final = std::numeric_limits<Scalar>::quiet_NaN();
  long clamp_cavity = 0;
  long clamp_site = 0;
  long factorizations = 0;

  auto weight_mean() const { return tilted_mean.head(n); }
  auto weight_std() const { return tilted_var.head(n).cwiseMax(Scalar(0)).cwiseSqrt(); }
};

struct IterDiag {
  int iteration;
  double eps;
  long clamp_cavity;
  long clamp_site;
  double free_energy;  // NaN unless trace_free_energy is set
  double rho;          // NaN unless learned
  double eta;
};

template <typename Scalar>
struct RunOptions {
  bool learn_rho = false;
  bool learn_eta = false;
  Scalar lr_rho = Scalar(1e-5);
  Scalar lr_eta = Scalar(1e-5);
  const SiteParams<Scalar>* init = nullptr;
  std::function<void(const IterDiag&)> on_iteration;
  bool trace_free_energy = false;
};

namespace detail {

// Locates the first nonpositive pivot of a symmetric matrix whose lower
// triangle is stored; only called on the LLT failure path.
template <typename Mat>
int find_failing_pivot(Mat a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(a(j, j) > 0) || !std::isfinite(a(j, j))) return static_cast<int>(j);
    const auto piv = std::sqrt(a(j, j));
    a.col(j).tail(n - j) /= piv;
    for (Eigen::Index k = j + 1; k < n; ++k)
      a.col(k).tail(n - k) -= a(k, j) * a.col(j).tail(n - k);
  }
  return -1;
}

}  // namespace detail

/// Per-site working vectors shared by the zero- and finite-temperature
/// engines, plus clamp counters.
template <typename Scalar>
struct SweepBuffers {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec marg_mean, marg_var;
  Vec cav_mean, cav_var;
  Vec tilt_mean, tilt_second, tilt_logz;
  Vec prev_mean, prev_second;
  long clamp_cavity = 0;
  long clamp_site = 0;

  void resize(Eigen::Index k) {
    for (Vec* v : {&marg_mean, &marg_var, &cav_mean, &cav_var, &tilt_mean, &tilt_second,
                   &tilt_logz, &prev_mean, &prev_second})
      v->resize(k);
    prev_mean.setZero();
    prev_second.setZero();
  }
};

/// Scratch space reused across sweeps; one instance per engine/trial.
template <typename Scalar>
struct EpWorkspace {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Mat prec;       // N x N precision of the weight-space Gaussian
  Mat scaled;     // M x N row-scaled design
  Mat solve_buf;  // N x (N + M)
  Eigen::LLT<Mat> llt;
  Vec rhs, w_bar;
  SweepBuffers<Scalar> sw;
  long factorizations = 0;

  void resize(Eigen::Index n, Eigen::Index m) {
    prec.resize(n, n);
    scaled.resize(m, n);
    solve_buf.resize(n, n + m);
    rhs.resize(n);
    w_bar.resize(n);
    sw.resize(n + m);
  }
};

/// Builds Sigma_W^{-1} = diag(1/d_W) + X^T diag(1/d_Y) X, factorizes it and
/// fills the marginal means and variances of all N + M sites. One Cholesky
/// per call.
template <typename Scalar>
void assemble_into(const DesignMatrix<Scalar>& x, const SiteParams<Scalar>& site,
                   EpWorkspace<Scalar>& ws) {
  const Eigen::Index n = x.n();
  const Eigen::Index m = x.m();

  ws.prec.setZero();
  if (m > 0) {
    // Example-site precisions may be negative; fold the few negative rows in
    // as rank-one downdates after the bulk positive update.
    const auto dinv_y = site.d.tail(m).cwiseInverse();
    ws.scaled.noalias() = dinv_y.cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal() * x.matrix();
    ws.prec.template selfadjointView<Eigen::Lower>().rankUpdate(ws.scaled.transpose());
    for (Eigen::Index t = 0; t < m; ++t)
      if (dinv_y[t] < Scalar(0))
        ws.prec.template selfadjointView<Eigen::Lower>().rankUpdate(
            x.matrix().row(t).transpose(), dinv_y[t]);
  }
  ws.prec.diagonal() += site.d.head(n).cwiseInverse();

  ws.llt.compute(ws.prec);
  ++ws.factorizations;
  if (ws.llt.info() != Eigen::Success)
    throw CholeskyError("weight-space precision is not numerically SPD",
                        detail::find_failing_pivot(ws.prec));

  ws.rhs = site.a.head(n).cwiseQuotient(site.d.head(n));
  if (m > 0)
    ws.rhs.noalias() += x.matrix().transpose() * site.a.tail(m).cwiseQuotient(site.d.tail(m));
  ws.w_bar = ws.llt.solve(ws.rhs);

  ws.solve_buf.leftCols(n).setIdentity();
  if (m > 0) ws.solve_buf.rightCols(m) = x.matrix().transpose();
  ws.llt.matrixL().solveInPlace(ws.solve_buf);
  ws.sw.marg_var.head(n) = ws.solve_buf.leftCols(n).colwise().squaredNorm();
  if (m > 0) ws.sw.marg_var.tail(m) = ws.solve_buf.rightCols(m).colwise().squaredNorm();

  ws.sw.marg_mean.head(n) = ws.w_bar;
  if (m > 0) ws.sw.marg_mean.tail(m).noalias() = x.matrix() * ws.w_bar;
}

/// Allocating variant returning the full summary (including the materialized
/// covariance), for callers outside the sweep loop.
template <typename Scalar>
GaussianSummary<Scalar> assemble_weight_precision(const DesignMatrix<Scalar>& x,
                                                  const SiteParams<Scalar>& site) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  EpWorkspace<Scalar> ws;
  ws.resize(x.n(), x.m());
  assemble_into(x, site, ws);
  GaussianSummary<Scalar> g;
  g.sigma_w = ws.llt.solve(Mat::Identity(x.n(), x.n()));
  g.w_bar = ws.w_bar;
  g.marg_mean = ws.sw.marg_mean;
  g.marg_var = ws.sw.marg_var;
  g.log_det_sigma_w = -2 * ws.llt.matrixLLT().diagonal().array().log().sum();
  return g;
}

/// Rank-one downdate from marginal to cavity moments. The denominators are
/// floored at kDenFloor and the cavity variances at cfg.var_floor; clamp
/// events are counted, not raised.
inline constexpr double kDenFloor = 1e-12;

template <typename Scalar>
void cavity_kernel(const SweepBuffers<Scalar>& in, const SiteParams<Scalar>& site,
                   const EPConfig<Scalar>& cfg,
                   Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& cav_mean,
                   Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& cav_var, long& clamp_count) {
  for (Eigen::Index i = 0; i < in.marg_mean.size(); ++i) {
    Scalar den = Scalar(1) - in.marg_var[i] / site.d[i];
    if (den < Scalar(kDenFloor)) {
      den = Scalar(kDenFloor);
      ++clamp_count;
    }
    Scalar cv = in.marg_var[i] / den;
    if (cv < cfg.var_floor) {
      cv = cfg.var_floor;
      ++clamp_count;
    }
    cav_var[i] = cv;
    cav_mean[i] = (in.marg_mean[i] - in.marg_var[i] * site.a[i] / site.d[i]) / den;
  }
}

template <typename Scalar>
CavitySummary<Scalar> cavity_from_marginal(const GaussianSummary<Scalar>& g,
                                           const SiteParams<Scalar>& site,
                                           const EPConfig<Scalar>& cfg = {},
                                           long* clamp_count = nullptr) {
  SweepBuffers<Scalar> in;
  in.marg_mean = g.marg_mean;
  in.marg_var = g.marg_var;
  CavitySummary<Scalar> cav;
  cav.cav_mean.resize(g.marg_mean.size());
  cav.cav_var.resize(g.marg_mean.size());
  long clamps = 0;
  cavity_kernel(in, site, cfg, cav.cav_mean, cav.cav_var, clamps);
  if (clamp_count) *clamp_count += clamps;
  return cav;
}

/// Moment-matching site refresh for one site, damped in natural parameters
/// (1/d, a/d). Site precisions may be negative (a tilted variance above the
/// cavity variance demands one; the assembled Gaussian stays the arbiter of
/// positive definiteness). Clamps act on the magnitude only: |1/d| is kept
/// within [1/d_max, 1/var_floor].
template <typename Scalar>
void site_update_one(Scalar tilt_mean, Scalar tilt_second, Scalar cav_mean, Scalar cav_var,
                     const EPConfig<Scalar>& cfg, Scalar& a, Scalar& d, long& clamp_count) {
  const Scalar v = std::max(tilt_second - tilt_mean * tilt_mean, cfg.var_floor);
  Scalar r_star = Scalar(1) / v - Scalar(1) / cav_var;
  if (std::abs(r_star) < Scalar(1) / cfg.d_max) {
    r_star = Scalar(1) / cfg.d_max;  // vague site; the sign no longer matters
    ++clamp_count;
  } else if (std::abs(r_star) > Scalar(1) / cfg.var_floor) {
    r_star = (r_star > 0 ? Scalar(1) : Scalar(-1)) / cfg.var_floor;
    ++clamp_count;
  }
  const Scalar s_star = tilt_mean * r_star + (tilt_mean - cav_mean) / cav_var;

  const Scalar g = cfg.damping;
  Scalar r_new = g / d + (Scalar(1) - g) * r_star;
  const Scalar s_new = g * a / d + (Scalar(1) - g) * s_star;
  // The damped combination can pass through zero when the precision changes
  // sign; keep the site representable.
  if (std::abs(r_new) < Scalar(1) / cfg.d_max)
    r_new = (r_new >= 0 ? Scalar(1) : Scalar(-1)) / cfg.d_max;
  d = Scalar(1) / r_new;
  a = s_new * d;
}

/// Single-site update returning the refreshed parameter vectors.
template <typename Scalar>
SiteParams<Scalar> site_update(Eigen::Index i, const CavitySummary<Scalar>& cav,
                               const MomentTriple<Scalar>& tilted, const EPConfig<Scalar>& cfg,
                               SiteParams<Scalar> site) {
  long clamps = 0;
  site_update_one(tilted.mean, tilted.second, cav.cav_mean[i], cav.cav_var[i], cfg, site.a[i],
                  site.d[i], clamps);
  return site;
}

/// Cavities, tilted moments and damped site refresh for every site, given
/// marginal moments already stored in the buffers. Returns
/// eps = max_i |delta mean_i| + |delta second_i| of the tilted marginals
/// against the previous sweep.
template <typename Scalar>
Scalar sweep_sites(const std::vector<SitePriorSpec<Scalar>>& priors, const EPConfig<Scalar>& cfg,
                   SiteParams<Scalar>& state, SweepBuffers<Scalar>& sw) {
  cavity_kernel(sw, state, cfg, sw.cav_mean, sw.cav_var, sw.clamp_cavity);

  const Eigen::Index k = sw.marg_mean.size();
  for (Eigen::Index i = 0; i < k; ++i) {
    const MomentTriple<Scalar> t = tilted_moments(
        priors[static_cast<std::size_t>(i)], CavityParams<Scalar>{sw.cav_mean[i], sw.cav_var[i]});
    sw.tilt_mean[i] = t.mean;
    sw.tilt_second[i] = t.second;
    sw.tilt_logz[i] = t.log_z;
  }

  const Scalar eps =
      ((sw.tilt_mean - sw.prev_mean).cwiseAbs() + (sw.tilt_second - sw.prev_second).cwiseAbs())
          .maxCoeff();
  sw.prev_mean = sw.tilt_mean;
  sw.prev_second = sw.tilt_second;

  for (Eigen::Index i = 0; i < k; ++i)
    site_update_one(sw.tilt_mean[i], sw.tilt_second[i], sw.cav_mean[i], sw.cav_var[i], cfg,
                    state.a[i], state.d[i], sw.clamp_site);
  return eps;
}

/// One full parallel sweep: a single factorization, all cavities, all tilted
/// moments, all site updates. Returns eps_t.
template <typename Scalar>
Scalar ep_iterate(const DesignMatrix<Scalar>& x, const std::vector<SitePriorSpec<Scalar>>& priors,
                  const EPConfig<Scalar>& cfg, SiteParams<Scalar>& state,
                  EpWorkspace<Scalar>& ws) {
  assemble_into(x, state, ws);
  return sweep_sites(priors, cfg, state, ws.sw);
}

namespace detail {

// Exact log-partition of the Gaussian approximation restricted to the
// constraint subspace, from pieces already present in the workspace.
template <typename Scalar>
Scalar log_z_q(const SiteParams<Scalar>& state, const EpWorkspace<Scalar>& ws, Eigen::Index n) {
  const Scalar log_det_sigma_w = -2 * ws.llt.matrixLLT().diagonal().array().log().sum();
  const Scalar quad = ws.w_bar.dot(ws.rhs) - state.a.cwiseAbs2().cwiseQuotient(state.d).sum();
  return Scalar(0.5) * (Scalar(n) * Scalar(kLog2Pi) + log_det_sigma_w + quad);
}

// EP free energy at the current sweep state: cavities, tilted log-partitions
// and the factorization must all correspond to `state`. Site terms enter as
// log(z_k / g_k), with g_k the overlap of site k's Gaussian factor and its
// cavity marginal, which makes the value stationary in the cavity parameters
// at an EP fixed point.
template <typename Scalar>
Scalar free_energy_from_sweep(const SiteParams<Scalar>& state, const SweepBuffers<Scalar>& sw,
                              Scalar log_z_q_value) {
  Scalar site_sum(0);
  for (Eigen::Index i = 0; i < state.a.size(); ++i) {
    const Scalar tot_var = state.d[i] + sw.cav_var[i];
    const Scalar diff = state.a[i] - sw.cav_mean[i];
    const Scalar log_g =
        Scalar(0.5) * std::log(state.d[i] / tot_var) - diff * diff / (Scalar(2) * tot_var);
    site_sum += sw.tilt_logz[i] - log_g;
  }
  return -log_z_q_value - site_sum;
}

}  // namespace detail

/// Runs damped parallel EP until the tilted moments stabilize. Non-convergence
/// within max_iter is a flagged outcome, not an error. With learn_rho /
/// learn_eta set, one projected gradient step on the prior parameters is
/// taken per sweep at fixed cavity moments, and every spike-and-slab
/// (respectively theta-mixture) site is refreshed with the shared value.
template <typename Scalar>
EPResult<Scalar> ep_run(const DesignMatrix<Scalar>& x, std::vector<SitePriorSpec<Scalar>> priors,
                        const EPConfig<Scalar>& cfg, const RunOptions<Scalar>& opts = {}) {
  cfg.validate();
  const Eigen::Index n = x.n();
  const Eigen::Index m = x.m();
  if (static_cast<Eigen::Index>(priors.size()) != n + m)
    throw std::invalid_argument("need one site prior per variable");

  EpWorkspace<Scalar> ws;
  ws.resize(n, m);
  SiteParams<Scalar> state = opts.init ? *opts.init : SiteParams<Scalar>::neutral(n + m);
  if (!opts.init) state.d.setConstant(cfg.init_d);

  EPResult<Scalar> res;
  res.n = n;
  res.m = m;

  const bool want_f = opts.on_iteration && opts.trace_free_energy;
  SiteParams<Scalar> pre_state;

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    assemble_into(x, state, ws);
    if (want_f) pre_state = state;  // the sweep refreshes the sites in place
    const Scalar eps = sweep_sites(priors, cfg, state, ws.sw);

    if (opts.learn_rho || opts.learn_eta) {
      HyperParams<Scalar> hyper{Scalar(0.25), Scalar(1), Scalar(1), opts.lr_rho, opts.lr_eta};
      for (const auto& p : priors) {
        if (const auto* ss = std::get_if<SpikeSlabParams<Scalar>>(&p)) {
          hyper.rho = ss->rho;
          hyper.lambda = ss->lambda;
        } else if (const auto* mix = std::get_if<ThetaMixtureParams<Scalar>>(&p)) {
          hyper.eta = mix->eta;
        }
      }
      const Scalar g_rho =
          opts.learn_rho
              ? grad_rho(ws.sw.cav_mean.head(n), ws.sw.cav_var.head(n), hyper.rho, hyper.lambda)
              : Scalar(0);
      const Scalar g_eta =
          opts.learn_eta ? grad_eta(ws.sw.cav_mean.tail(m), ws.sw.cav_var.tail(m), hyper.eta)
                         : Scalar(0);
      const HyperParams<Scalar> next = hyper_step(hyper, g_rho, g_eta);
      for (auto& p : priors) {
        if (auto* ss = std::get_if<SpikeSlabParams<Scalar>>(&p)) {
          if (opts.learn_rho) ss->rho = next.rho;
        } else if (auto* mix = std::get_if<ThetaMixtureParams<Scalar>>(&p)) {
          if (opts.learn_eta) mix->eta = next.eta;
        }
      }
      if (opts.learn_rho) res.rho_final = next.rho;
      if (opts.learn_eta) res.eta_final = next.eta;
    }

    if (opts.on_iteration) {
      double f_ep = std::numeric_limits<double>::quiet_NaN();
      if (want_f)
        f_ep = static_cast<double>(
            detail::free_energy_from_sweep(pre_state, ws.sw, detail::log_z_q(pre_state, ws, n)));
      opts.on_iteration(IterDiag{iter, static_cast<double>(eps), ws.sw.clamp_cavity,
                                 ws.sw.clamp_site, f_ep, static_cast<double>(res.rho_final),
                                 static_cast<double>(res.eta_final)});
    }

    res.iterations = iter;
    res.eps_final = eps;
    if (eps < cfg.eps_stop) {
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
