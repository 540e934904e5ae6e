#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ep/design.hpp"
#include "ep/errors.hpp"
#include "ep/rng.hpp"

// Teacher sampling, pattern ensembles and label generation for the
// teacher-student experiments: i.i.d. Gaussian patterns, correlated patterns
// from a structured-covariance multivariate normal, and binary patterns from
// the zero-temperature Glauber dynamics of a recurrent network of diluted
// perceptrons.

namespace ep {

struct TeacherSpec {
  int n;
  double rho;
  double slab_std = 1.0;
};

enum class EnsembleKind { kIid, kMvn, kRecurrent };
enum class RecurrentUpdate { kSync, kFullSweep, kHamming };

struct PatternEnsemble {
  EnsembleKind kind = EnsembleKind::kIid;
  int m = 0;
  int u = 1;                                         // MVN low-rank parameter
  RecurrentUpdate update = RecurrentUpdate::kSync;   // recurrent variants
  int d_hamming = 10;
  long hamming_step_budget = 1000000;                // async updates per stored pattern
};

struct LabelNoiseSpec {
  double eta = 1.0;
  int flip_count(int m) const {
    return static_cast<int>(std::lround((1.0 - eta) * m));
  }
};

inline double sign_of(double z) { return z >= 0 ? 1.0 : -1.0; }  // sign(0) = 1

/// Each weight is nonzero with probability rho, drawn from N(0, slab_std^2).
/// An all-zero draw is resampled.
inline Eigen::VectorXd sample_teacher(const TeacherSpec& spec, Rng& rng) {
  if (!(spec.rho > 0.0) || spec.rho > 1.0 || !(spec.slab_std > 0.0) || spec.n < 1)
    throw std::invalid_argument("teacher spec requires 0 < rho <= 1, slab_std > 0, n >= 1");
  Eigen::VectorXd b(spec.n);
  while (true) {
    for (int i = 0; i < spec.n; ++i) {
      const bool nonzero = rng.bernoulli(spec.rho);
      const double g = rng.normal();  // drawn unconditionally to keep the stream aligned
      b[i] = nonzero ? spec.slab_std * g : 0.0;
    }
    if (b.cwiseAbs().maxCoeff() > 0.0) return b;
  }
}

inline Eigen::MatrixXd gen_patterns_iid(int m, int n, Rng& rng) {
  Eigen::MatrixXd x(m, n);
  for (int t = 0; t < m; ++t)
    for (int i = 0; i < n; ++i) x(t, i) = rng.normal();
  return x;
}

/// Covariance S = Y^T Y + Delta with Y a u x n i.i.d. standard normal matrix
/// and Delta diagonal with |N(0,1)| entries; rows sampled via the Cholesky
/// factor of S.
struct MvnEnsemble {
  Eigen::MatrixXd y;          // u x n
  Eigen::VectorXd delta;      // n
  Eigen::MatrixXd chol_s;     // lower factor of S
};

inline MvnEnsemble sample_mvn_covariance(int n, int u, Rng& rng) {
  if (u < 1) throw std::invalid_argument("MVN ensemble requires u >= 1");
  MvnEnsemble ens;
  ens.y.resize(u, n);
  for (int r = 0; r < u; ++r)
    for (int i = 0; i < n; ++i) ens.y(r, i) = rng.normal();
  ens.delta.resize(n);
  for (int i = 0; i < n; ++i) ens.delta[i] = std::abs(rng.normal());
  Eigen::MatrixXd s = ens.y.transpose() * ens.y;
  s.diagonal() += ens.delta;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success)
    throw CholeskyError("MVN covariance is not numerically SPD", -1);
  ens.chol_s = llt.matrixL();
  return ens;
}

inline Eigen::MatrixXd gen_patterns_mvn(int m, int n, int u, Rng& rng) {
  const MvnEnsemble ens = sample_mvn_covariance(n, u, rng);
  Eigen::MatrixXd x(m, n);
  Eigen::VectorXd z(n);
  for (int t = 0; t < m; ++t) {
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    x.row(t) = (ens.chol_s * z).transpose();
  }
  return x;
}

/// Recurrent network of n diluted perceptrons without self-loops; row i of
/// `weights` holds the incoming weights of perceptron i against the other
/// n - 1 units in index order.
struct RecurrentNet {
  Eigen::MatrixXd weights;  // n x (n-1)
  double rho = 0;
  double slab_std = 1.0;

  int n() const { return static_cast<int>(weights.rows()); }

  double local_field(const Eigen::VectorXd& state, int i) const {
    double z = 0;
    for (int j = 0, c = 0; j < n(); ++j)
      if (j != i) z += weights(i, c++) * state[j];
    return z;
  }
};

inline RecurrentNet sample_recurrent_net(int n, double rho, double slab_std, Rng& rng) {
  if (n < 2) throw std::invalid_argument("recurrent net requires n >= 2");
  RecurrentNet net;
  net.rho = rho;
  net.slab_std = slab_std;
  net.weights.resize(n, n - 1);
  const TeacherSpec row_spec{n - 1, rho, slab_std};
  for (int i = 0; i < n; ++i) net.weights.row(i) = sample_teacher(row_spec, rng).transpose();
  return net;
}

/// One synchronous zero-temperature Glauber step: every unit takes the sign
/// of its local field simultaneously.
inline Eigen::VectorXd glauber_sync_step(const RecurrentNet& net, const Eigen::VectorXd& state) {
  Eigen::VectorXd next(net.n());
  for (int i = 0; i < net.n(); ++i) next[i] = sign_of(net.local_field(state, i));
  return next;
}

/// Glauber dynamics at zero temperature. Synchronous update stores every
/// state; full-sweep stores after n asynchronous single-site updates (one
/// random permutation per sweep); the Hamming variant stores a state exactly
/// when its distance from the last stored state reaches d_hamming.
inline Eigen::MatrixXd gen_patterns_recurrent(const RecurrentNet& net,
                                              const PatternEnsemble& ens, Rng& rng) {
  const int n = net.n();
  const int m = ens.m;
  Eigen::VectorXd state(n);
  for (int i = 0; i < n; ++i) state[i] = sign_of(rng.normal());

  Eigen::MatrixXd patterns(m, n);
  if (ens.update == RecurrentUpdate::kSync) {
    for (int t = 0; t < m; ++t) {
      patterns.row(t) = state.transpose();
      state = glauber_sync_step(net, state);
    }
    return patterns;
  }

  if (ens.update == RecurrentUpdate::kFullSweep) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int t = 0; t < m; ++t) {
      patterns.row(t) = state.transpose();
      for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (int i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[rng.uniform_int(0, static_cast<std::uint64_t>(i))]);
      for (int i : perm) state[i] = sign_of(net.local_field(state, i));
    }
    return patterns;
  }

  // Hamming-controlled asynchronous updates.
  if (ens.d_hamming < 1 || ens.d_hamming > n)
    throw std::invalid_argument("d_hamming must lie in [1, n]");
  Eigen::VectorXd stored = state;
  for (int t = 0; t < m; ++t) {
    patterns.row(t) = stored.transpose();
    int dist = 0;
    long steps = 0;
    while (dist != ens.d_hamming) {
      if (++steps > ens.hamming_step_budget)
        throw NumericalError("hamming target " + std::to_string(ens.d_hamming) +
                             " not reached within " + std::to_string(ens.hamming_step_budget) +
                             " asynchronous updates");
      const int i = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(n - 1)));
      const double updated = sign_of(net.local_field(state, i));
      if (updated != state[i]) {
        state[i] = updated;
        dist += state[i] != stored[i] ? 1 : -1;
      }
    }
    stored = state;
  }
  return patterns;
}

/// sigma_tau = sign(B . x_tau) and the signed design matrix with rows
/// sigma_tau * x_tau^T, so design * B >= 0 holds elementwise by construction.
inline std::pair<Eigen::VectorXd, DesignMatrix<double>> label(const Eigen::MatrixXd& patterns,
                                                              const Eigen::VectorXd& b) {
  if (patterns.cols() != b.size()) throw std::invalid_argument("pattern/teacher size mismatch");
  if (b.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("teacher must not be all zero");
  Eigen::VectorXd sigma(patterns.rows());
  Eigen::MatrixXd signed_rows(patterns.rows(), patterns.cols());
  for (Eigen::Index t = 0; t < patterns.rows(); ++t) {
    sigma[t] = sign_of(patterns.row(t).dot(b));
    signed_rows.row(t) = sigma[t] * patterns.row(t);
  }
  return {sigma, DesignMatrix<double>(std::move(signed_rows))};
}

/// Negates exactly flip_count(m) labels at positions drawn uniformly without
/// replacement; returns the flipped indices in ascending order.
inline std::vector<int> flip_labels(Eigen::VectorXd& sigma, const LabelNoiseSpec& spec, Rng& rng) {
  if (!(spec.eta > 0.0) || spec.eta > 1.0)
    throw std::invalid_argument("label noise requires eta in (0, 1]");
  const int m = static_cast<int>(sigma.size());
  const int k = spec.flip_count(m);
  if (k < 0 || k > m) throw std::invalid_argument("flip count out of range");
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates: the first k entries become the flipped set.
  for (int i = 0; i < k; ++i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[rng.uniform_int(static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(m - 1))]);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  for (int i : idx) sigma[i] = -sigma[i];
  return idx;
}

/// Per-perceptron view of a recurrent-network trajectory: inputs are the
/// other units' states, the teacher is row i of the weight matrix.
struct PerceptronView {
  Eigen::VectorXd teacher;    // n - 1
  Eigen::MatrixXd patterns;   // m x (n - 1)
};

inline PerceptronView perceptron_view(const RecurrentNet& net, const Eigen::MatrixXd& patterns,
                                      int i) {
  const int n = net.n();
  if (i < 0 || i >= n) throw std::invalid_argument("perceptron index out of range");
  PerceptronView view;
  view.teacher = net.weights.row(i).transpose();
  view.patterns.resize(patterns.rows(), n - 1);
  for (int j = 0, c = 0; j < n; ++j) {
    if (j == i) continue;
    view.patterns.col(c++) = patterns.col(j);
  }
  return view;
}

}  // namespace ep
