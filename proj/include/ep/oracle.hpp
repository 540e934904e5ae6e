#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <vector>

#include "ep/errors.hpp"
#include "ep/normal.hpp"
#include "ep/rng.hpp"
#include "ep/site_priors.hpp"

// Independent ground-truth generators used by the test suites: adaptive
// Gauss-Kronrod quadrature for univariate tilted moments, an importance
// sampling posterior estimate for tiny instances, and central finite
// differences. None of these share code with the closed forms they check.

namespace ep::oracle {

struct QuadratureSpec {
  double abs_tol = 1e-13;
  double rel_tol = 1e-11;
  int max_subdivisions = 600;
};

namespace detail {

// Gauss-Kronrod 7-15 nodes and weights (positive half, QUADPACK dqk15).
inline constexpr double kXgk[8] = {
    0.9914553711208126, 0.9491079123427585, 0.8648644233597691, 0.7415311855993944,
    0.5860872354676911, 0.4058451513773972, 0.2077849550078985, 0.0};
inline constexpr double kWgk[8] = {
    0.02293532201052922, 0.06309209262997855, 0.10479001032225018, 0.14065325971552592,
    0.16900472663926790, 0.19035057806478541, 0.20443294007529889, 0.20948214108472783};
inline constexpr double kWg[4] = {
    0.12948496616886969, 0.27970539148927664, 0.38183005050511894, 0.41795918367346939};

struct Panel {
  double lo, hi, integral, error;
  bool operator<(const Panel& other) const { return error < other.error; }
};

template <typename F>
Panel eval_panel(F&& f, double lo, double hi) {
  const double c = 0.5 * (lo + hi);
  const double h = 0.5 * (hi - lo);
  double fv[15];
  for (int j = 0; j < 7; ++j) {
    fv[j] = f(c - h * kXgk[j]);
    fv[14 - j] = f(c + h * kXgk[j]);
  }
  fv[7] = f(c);
  double kronrod = 0, gauss = 0;
  for (int j = 0; j < 7; ++j) kronrod += kWgk[j] * (fv[j] + fv[14 - j]);
  kronrod += kWgk[7] * fv[7];
  for (int j = 0; j < 3; ++j) gauss += kWg[j] * (fv[2 * j + 1] + fv[13 - 2 * j]);
  gauss += kWg[3] * fv[7];
  kronrod *= h;
  gauss *= h;
  return {lo, hi, kronrod, std::abs(kronrod - gauss)};
}

}  // namespace detail

/// Adaptive bisection driven by the Kronrod-Gauss error estimate. Throws
/// QuadratureError (carrying the best estimate) if the budget runs out.
template <typename F>
double integrate(F&& f, double lo, double hi, const QuadratureSpec& spec) {
  if (!(hi > lo)) return 0.0;
  std::priority_queue<detail::Panel> panels;
  panels.push(detail::eval_panel(f, lo, hi));
  double total = panels.top().integral;
  double err = panels.top().error;
  int splits = 0;
  while (err > std::max(spec.abs_tol, spec.rel_tol * std::abs(total))) {
    if (++splits > spec.max_subdivisions)
      throw QuadratureError("quadrature tolerance not reached within " +
                                std::to_string(spec.max_subdivisions) + " subdivisions",
                            total, err);
    const detail::Panel worst = panels.top();
    panels.pop();
    total -= worst.integral;
    err -= worst.error;
    const double mid = 0.5 * (worst.lo + worst.hi);
    for (const auto& half :
         {detail::eval_panel(f, worst.lo, mid), detail::eval_panel(f, mid, worst.hi)}) {
      total += half.integral;
      err += half.error;
      panels.push(half);
    }
  }
  return total;
}

namespace detail {

struct Window {
  double lo, hi;
  double weight;  // constant pseudoprior weight on this window
};

// Moments of sum_w weight_w * exp(log_g(h)) over the windows, plus an
// optional point mass at zero, everything rescaled by exp(-log_scale) for
// underflow safety. log_g is the log cavity density.
template <typename LogG>
MomentTriple<double> windowed_moments(LogG&& log_g, const std::vector<Window>& windows,
                                      double log_point_mass, double log_scale,
                                      const QuadratureSpec& spec) {
  double z = 0, first = 0;
  const bool has_point = std::isfinite(log_point_mass);
  if (has_point) z += std::exp(log_point_mass - log_scale);
  for (const auto& w : windows) {
    if (!(w.hi > w.lo) || w.weight <= 0) continue;
    auto g = [&](double h) { return w.weight * std::exp(log_g(h) - log_scale); };
    z += integrate(g, w.lo, w.hi, spec);
    first += integrate([&](double h) { return h * g(h); }, w.lo, w.hi, spec);
  }
  if (!(z > 0)) throw DegeneratePartition("quadrature oracle: zero partition");
  const double mean = first / z;
  // Central second pass avoids cancellation in the variance.
  double central = 0;
  if (has_point) central += mean * mean * std::exp(log_point_mass - log_scale);
  for (const auto& w : windows) {
    if (!(w.hi > w.lo) || w.weight <= 0) continue;
    central += integrate(
        [&](double h) {
          const double d = h - mean;
          return d * d * w.weight * std::exp(log_g(h) - log_scale);
        },
        w.lo, w.hi, spec);
  }
  const double var = central / z;
  return {std::log(z) + log_scale, mean, var + mean * mean};
}

}  // namespace detail

/// Quadrature reference for the closed-form tilted moments. The point mass
/// of the spike-and-slab prior is added analytically; theta families are
/// integrated over their consistent half-lines only.
inline MomentTriple<double> quad_moments(const SitePriorSpec<double>& prior,
                                         const CavityParams<double>& cav,
                                         const QuadratureSpec& spec = {}) {
  const double mu = cav.mu;
  const double sigma = cav.sigma;
  const double sd = std::sqrt(sigma);

  if (const auto* ss = std::get_if<SpikeSlabParams<double>>(&prior)) {
    // Slab integrand is a Gaussian product centered at the shrunk mean.
    const double post_sd = 1.0 / std::sqrt(ss->lambda + 1.0 / sigma);
    const double center = mu / (1.0 + ss->lambda * sigma);
    auto log_g = [&](double h) {
      return std::log(ss->rho) + 0.5 * std::log(ss->lambda) - 0.5 * kLog2Pi -
             0.5 * ss->lambda * h * h + log_norm_pdf(h, mu, sigma);
    };
    const double log_point =
        ss->rho < 1.0 ? std::log1p(-ss->rho) + log_norm_pdf(0.0, mu, sigma)
                      : -std::numeric_limits<double>::infinity();
    const double log_scale =
        std::max(ss->rho > 0.0 ? log_g(center) : -std::numeric_limits<double>::infinity(),
                 log_point);
    std::vector<detail::Window> windows;
    if (ss->rho > 0.0) windows.push_back({center - 14 * post_sd, center + 14 * post_sd, 1.0});
    return detail::windowed_moments(log_g, windows, log_point, log_scale, spec);
  }

  auto log_g = [&](double h) { return log_norm_pdf(h, mu, sigma); };
  const double none = -std::numeric_limits<double>::infinity();

  // Panels over one consistent half-line. When the cavity mean lies on the
  // excluded side, the surviving mass is an edge spike of width
  // sigma / (|mu| + sd), which the Kronrod error estimate cannot see inside
  // one wide panel; geometrically growing panels from the edge resolve it.
  auto half_line = [&](bool positive, double weight) {
    std::vector<detail::Window> windows;
    if (weight <= 0) return windows;
    const double m_in = positive ? mu : -mu;  // mean in edge coordinates
    const double hi = std::max(0.0, m_in) + 13 * sd;
    if (m_in >= sd) {
      const double lo = std::max(0.0, m_in - 13 * sd);
      windows.push_back({lo, hi, weight});
    } else {
      const double scale = sigma / (std::abs(m_in) + sd);
      double lo = 0.0;
      for (double b = scale; lo < hi; b *= 4) {
        const double up = std::min(b, hi);
        windows.push_back({lo, up, weight});
        lo = up;
      }
    }
    if (!positive)
      for (auto& w : windows) {
        const double new_lo = -w.hi;
        w.hi = -w.lo;
        w.lo = new_lo;
      }
    return windows;
  };

  if (std::get_if<ThetaParams>(&prior)) {
    const double peak = std::max(mu, 0.0);
    return detail::windowed_moments(log_g, half_line(true, 1.0), none, log_g(peak), spec);
  }

  const auto& mix = std::get<ThetaMixtureParams<double>>(prior);
  std::vector<detail::Window> windows = half_line(true, mix.eta);
  for (const auto& w : half_line(false, 1.0 - mix.eta)) windows.push_back(w);
  // Normalize by the density peak over the contributing windows; the global
  // peak may sit on a side whose weight is zero.
  double log_scale = none;
  for (const auto& w : windows)
    log_scale = std::max(log_scale, log_g(std::clamp(mu, w.lo, w.hi)));
  return detail::windowed_moments(log_g, windows, none, log_scale, spec);
}

/// Weighted posterior mean and standard error per weight from importance
/// sampling against the spike-and-slab prior. The sample weight of each draw
/// is the product of the example pseudopriors evaluated at the signed
/// projections, so the hard theta case degenerates to rejection sampling.
struct McPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_error;
  double ess;
};

inline McPosterior mc_posterior(const Eigen::MatrixXd& signed_design,
                                const SpikeSlabParams<double>& weight_prior,
                                const SitePriorSpec<double>& example_prior,
                                std::size_t n_samples, std::uint64_t seed) {
  const Eigen::Index n = signed_design.cols();
  const Eigen::Index m = signed_design.rows();
  if (n > 8 || m > 8)
    throw std::invalid_argument("mc_posterior is hard-capped at N <= 8, M <= 8");

  double eta = 1.0;
  if (const auto* mix = std::get_if<ThetaMixtureParams<double>>(&example_prior)) eta = mix->eta;

  const double slab_sd = 1.0 / std::sqrt(weight_prior.lambda);
  Rng rng(seed);
  Eigen::VectorXd w(n), proj(m);
  Eigen::VectorXd a1 = Eigen::VectorXd::Zero(n), b1 = Eigen::VectorXd::Zero(n),
                  b2 = Eigen::VectorXd::Zero(n);
  double w1 = 0, w2 = 0;

  for (std::size_t s = 0; s < n_samples; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool nonzero = rng.bernoulli(weight_prior.rho);
      const double g = rng.normal();  // fixed draw count keeps streams aligned
      w[i] = nonzero ? slab_sd * g : 0.0;
    }
    proj.noalias() = signed_design * w;
    double wt = 1.0;
    for (Eigen::Index t = 0; t < m && wt > 0; ++t)
      wt *= proj[t] >= 0 ? eta : 1.0 - eta;
    if (wt == 0) continue;
    w1 += wt;
    w2 += wt * wt;
    a1 += wt * w;
    b1 += (wt * wt) * w;
    b2 += (wt * wt) * w.cwiseAbs2();
  }

  const double ess = w2 > 0 ? w1 * w1 / w2 : 0.0;
  if (ess < 100)
    throw NumericalError("mc_posterior: effective sample size " + std::to_string(ess) +
                         " < 100, increase n_samples");
  McPosterior out;
  out.mean = a1 / w1;
  out.std_error = ((b2 - 2.0 * out.mean.cwiseProduct(b1) + out.mean.cwiseAbs2() * w2) / (w1 * w1))
                      .cwiseMax(0.0)
                      .cwiseSqrt();
  out.ess = ess;
  return out;
}

/// Central finite differences, one column per coordinate.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& point, double h) {
  if (!(h > 0)) throw std::invalid_argument("fd_gradient requires h > 0");
  Eigen::VectorXd grad(point.size());
  Eigen::VectorXd x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + h;
    const double up = f(x);
    x[i] = point[i] - h;
    const double down = f(x);
    x[i] = point[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace ep::oracle
