#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ep/datagen.hpp"
#include "ep/rng.hpp"

using namespace ep;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("teacher: dense draw has no zeros") {
  Rng rng(1);
  const VectorXd b = sample_teacher({64, 1.0, 1.0}, rng);
  CHECK((b.array() != 0).count() == 64);
}

TEST_CASE("teacher: nonzero count follows the binomial law") {
  const int n = 128;
  const double rho = 0.25;
  long total = 0;
  const int reps = 200;
  Rng rng(2);
  for (int r = 0; r < reps; ++r)
    total += (sample_teacher({n, rho, 1.0}, rng).array() != 0).count();
  const double mean = static_cast<double>(total) / reps;
  const double sigma = std::sqrt(n * rho * (1 - rho) / reps);
  CHECK(std::abs(mean - n * rho) <= 4 * sigma);
}

TEST_CASE("teacher: slab variance matches the configured scale") {
  Rng rng(3);
  double sum2 = 0;
  long count = 0;
  const double slab_std = 0.7;
  for (int r = 0; r < 1500; ++r) {
    const VectorXd b = sample_teacher({128, 0.5, slab_std}, rng);
    for (int i = 0; i < 128; ++i)
      if (b[i] != 0) {
        sum2 += b[i] * b[i];
        ++count;
      }
  }
  CHECK(count > 90000);
  CHECK(std::abs(sum2 / count - slab_std * slab_std) < 0.05 * slab_std * slab_std);
}

TEST_CASE("iid patterns: unit column variance") {
  Rng rng(4);
  const int m = 10000, n = 4;
  const MatrixXd x = gen_patterns_iid(m, n, rng);
  for (int c = 0; c < n; ++c) {
    const double mu = x.col(c).mean();
    const double var = (x.col(c).array() - mu).square().sum() / (m - 1);
    CHECK(std::abs(var - 1.0) < 0.05);
  }
}

TEST_CASE("mvn covariance: structure and definiteness") {
  Rng rng(5);
  const auto ens = sample_mvn_covariance(32, 1, rng);
  // S - Delta = Y^T Y has rank u = 1.
  const MatrixXd low_rank = ens.y.transpose() * ens.y;
  Eigen::JacobiSVD<MatrixXd> svd(low_rank);
  CHECK(svd.singularValues()[0] > 0);
  CHECK(svd.singularValues()[1] < 1e-10 * svd.singularValues()[0]);
  // Cholesky succeeded inside the builder for many seeds:
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    Rng r2(seed);
    CHECK_NOTHROW(sample_mvn_covariance(24, 1, r2));
  }
}

TEST_CASE("mvn patterns: empirical covariance tracks S") {
  Rng rng(6);
  const int n = 6;
  const auto ens = sample_mvn_covariance(n, 1, rng);
  const MatrixXd s = ens.chol_s * ens.chol_s.transpose();
  const int m = 40000;
  Rng rng2(7);
  // regenerate with the same covariance by drawing rows directly
  MatrixXd x(m, n);
  VectorXd z(n);
  for (int t = 0; t < m; ++t) {
    for (int i = 0; i < n; ++i) z[i] = rng2.normal();
    x.row(t) = (ens.chol_s * z).transpose();
  }
  const MatrixXd emp = x.transpose() * x / m;
  CHECK((emp - s).cwiseAbs().maxCoeff() < 0.1 * s.cwiseAbs().maxCoeff());
}

TEST_CASE("recurrent sync dynamics: period-4 hand trace") {
  RecurrentNet net;
  net.weights.resize(2, 1);
  net.weights << 1.0, -1.0;  // unit 0 copies unit 1; unit 1 negates unit 0
  VectorXd x0(2);
  x0 << 1, 1;
  const VectorXd x1 = glauber_sync_step(net, x0);
  CHECK(x1[0] == 1);
  CHECK(x1[1] == -1);
  const VectorXd x2 = glauber_sync_step(net, x1);
  CHECK(x2[0] == -1);
  CHECK(x2[1] == -1);
  const VectorXd x3 = glauber_sync_step(net, x2);
  CHECK(x3[0] == -1);
  CHECK(x3[1] == 1);
  const VectorXd x4 = glauber_sync_step(net, x3);
  CHECK(x4 == x0);
}

TEST_CASE("recurrent patterns: deterministic given the seed, +-1 valued") {
  Rng rng_net(8);
  const auto net = sample_recurrent_net(16, 0.25, 1.0, rng_net);
  PatternEnsemble ens;
  ens.kind = EnsembleKind::kRecurrent;
  ens.m = 24;
  ens.update = RecurrentUpdate::kSync;
  Rng a(9), b(9);
  const MatrixXd pa = gen_patterns_recurrent(net, ens, a);
  const MatrixXd pb = gen_patterns_recurrent(net, ens, b);
  CHECK(pa == pb);
  CHECK((pa.cwiseAbs().array() == 1.0).all());
}

TEST_CASE("recurrent hamming: exact distance between stored patterns") {
  Rng rng_net(10);
  const auto net = sample_recurrent_net(32, 0.25, 1.0, rng_net);
  PatternEnsemble ens;
  ens.kind = EnsembleKind::kRecurrent;
  ens.m = 12;
  ens.update = RecurrentUpdate::kHamming;
  ens.d_hamming = 5;
  Rng rng(11);
  const MatrixXd p = gen_patterns_recurrent(net, ens, rng);
  for (int t = 1; t < 12; ++t) {
    const int dist = static_cast<int>((p.row(t).array() != p.row(t - 1).array()).count());
    CHECK(dist == 5);
  }
}

TEST_CASE("recurrent hamming: unreachable target names the budget") {
  // Mutually reinforcing pair: the all-ones state is frozen, no flip ever
  // happens, so no Hamming target is reachable.
  RecurrentNet net;
  net.weights.resize(2, 1);
  net.weights << 1.0, 1.0;
  PatternEnsemble ens;
  ens.kind = EnsembleKind::kRecurrent;
  ens.m = 2;
  ens.update = RecurrentUpdate::kHamming;
  ens.d_hamming = 1;
  ens.hamming_step_budget = 500;
  bool threw = false;
  for (std::uint64_t seed = 0; seed < 8 && !threw; ++seed) {
    Rng rng(seed);
    try {
      gen_patterns_recurrent(net, ens, rng);
    } catch (const NumericalError& e) {
      threw = true;
      CHECK(std::string(e.what()).find("500") != std::string::npos);
    }
  }
  CHECK(threw);
}

TEST_CASE("recurrent full sweep stores one pattern per n updates") {
  Rng rng_net(12);
  const auto net = sample_recurrent_net(12, 0.5, 1.0, rng_net);
  PatternEnsemble ens;
  ens.kind = EnsembleKind::kRecurrent;
  ens.m = 6;
  ens.update = RecurrentUpdate::kFullSweep;
  Rng rng(13);
  const MatrixXd p = gen_patterns_recurrent(net, ens, rng);
  CHECK(p.rows() == 6);
  CHECK((p.cwiseAbs().array() == 1.0).all());
}

TEST_CASE("labels: sign convention and design identity") {
  VectorXd b(3);
  b << 1, 0, 0;
  MatrixXd pat(2, 3);
  pat << 2, 5, -1, -0.5, 1, 1;
  const auto [sigma, design] = label(pat, b);
  CHECK(sigma[0] == 1);
  CHECK(sigma[1] == -1);
  CHECK((design.matrix() * b).minCoeff() >= 0);

  const auto [neg_sigma, neg_design] = label(pat, (-b).eval());
  CHECK(neg_sigma[0] == -sigma[0]);
  CHECK(neg_sigma[1] == -sigma[1]);
  (void)neg_design;
}

TEST_CASE("labels: design consistency on random instances") {
  Rng rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    const VectorXd b = sample_teacher({12, 0.5, 1.0}, rng);
    const MatrixXd pat = gen_patterns_iid(20, 12, rng);
    const auto [sigma, design] = label(pat, b);
    (void)sigma;
    CHECK((design.matrix() * b).minCoeff() >= 0);
  }
}

TEST_CASE("flip_labels: exact counts") {
  Rng rng(15);
  VectorXd sigma = VectorXd::Ones(100);
  const auto flipped = flip_labels(sigma, {0.95}, rng);
  CHECK(flipped.size() == 5);
  CHECK((sigma.array() == -1).count() == 5);

  VectorXd sigma10 = VectorXd::Ones(10);
  const auto half = flip_labels(sigma10, {0.5}, rng);
  CHECK(half.size() == 5);

  VectorXd untouched = VectorXd::Ones(17);
  const auto none = flip_labels(untouched, {1.0}, rng);
  CHECK(none.empty());
  CHECK((untouched.array() == 1).all());
}

TEST_CASE("perceptron view drops the self column") {
  Rng rng(16);
  const auto net = sample_recurrent_net(5, 0.5, 1.0, rng);
  MatrixXd patterns(3, 5);
  patterns << 1, -1, 1, 1, -1, -1, -1, 1, -1, 1, 1, 1, -1, -1, 1;
  const auto view = perceptron_view(net, patterns, 2);
  CHECK(view.patterns.cols() == 4);
  CHECK(view.patterns(0, 0) == 1);
  CHECK(view.patterns(0, 1) == -1);
  CHECK(view.patterns(0, 2) == 1);   // column 3 of the full state
  CHECK(view.patterns(0, 3) == -1);  // column 4
  CHECK(view.teacher == net.weights.row(2).transpose());
}
