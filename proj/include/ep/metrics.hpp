#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

// Evaluation quantities for teacher-student runs: normalized mean squared
// error in dB, the posterior nonzero-probability score, ROC/AUC with tie
// grouping, and top-k sensitivity curves.

namespace ep {

inline constexpr double kMseDbFloor = -320.0;

/// 10 log10 of the MSE between the direction vectors w/||w|| and b/||b||.
/// Exact recovery is floored at kMseDbFloor to keep aggregates finite.
template <typename Scalar>
Scalar normalized_mse_db(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& w,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b) {
  if (w.size() != b.size()) throw std::invalid_argument("size mismatch");
  const Scalar wn = w.norm();
  const Scalar bn = b.norm();
  if (!(wn > Scalar(0)) || !(bn > Scalar(0)))
    throw std::invalid_argument("normalized_mse_db requires nonzero vectors");
  const Scalar mse = (w / wn - b / bn).squaredNorm() / Scalar(w.size());
  if (mse == Scalar(0)) return Scalar(kMseDbFloor);
  return std::max(Scalar(10) * std::log10(mse), Scalar(kMseDbFloor));
}

/// Posterior probability that a weight is nonzero, from its cavity moments
/// and the spike-and-slab parameters.
template <typename Scalar>
Scalar p_nonzero(Scalar mu, Scalar sigma, Scalar rho, Scalar lambda) {
  if (!(sigma > Scalar(0))) throw std::invalid_argument("p_nonzero requires sigma > 0");
  if (rho >= Scalar(1)) return Scalar(1);
  if (rho <= Scalar(0)) return Scalar(0);
  const Scalar ls = lambda * sigma;
  const Scalar odds = (Scalar(1) / rho - Scalar(1)) * std::sqrt((Scalar(1) + ls) / ls) *
                      std::exp(-mu * mu / (Scalar(2) * sigma * (Scalar(1) + ls)));
  return Scalar(1) / (Scalar(1) + odds);
}

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (false positive rate, true positive rate)
  double auc = 0;
};

/// Threshold sweep over descending scores with ties grouped into single
/// vertices; AUC by the trapezoid rule (ties count half, matching the
/// Mann-Whitney statistic).
inline RocCurve roc_and_auc(const Eigen::VectorXd& scores,
                            const std::vector<bool>& truth) {
  const std::size_t n = truth.size();
  if (static_cast<std::size_t>(scores.size()) != n) throw std::invalid_argument("size mismatch");
  const long pos = std::count(truth.begin(), truth.end(), true);
  const long neg = static_cast<long>(n) - pos;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_and_auc needs at least one positive and one negative");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return scores[i] > scores[j]; });

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (truth[static_cast<std::size_t>(order[j])]) ++tp; else ++fp;
      ++j;
    }
    roc.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos));
    i = j;
  }
  for (std::size_t k = 1; k < roc.points.size(); ++k) {
    const auto& [x0, y0] = roc.points[k - 1];
    const auto& [x1, y1] = roc.points[k];
    roc.auc += (x1 - x0) * 0.5 * (y0 + y1);
  }
  return roc;
}

/// Fraction of the true support recovered among the k top-scored weights,
/// for k = 1..N. Ties resolved by stable index order.
inline std::vector<std::pair<int, double>> sensitivity_curve(const Eigen::VectorXd& scores,
                                                             const std::vector<bool>& truth) {
  const std::size_t n = truth.size();
  if (static_cast<std::size_t>(scores.size()) != n) throw std::invalid_argument("size mismatch");
  const long pos = std::count(truth.begin(), truth.end(), true);
  if (pos == 0) throw std::invalid_argument("sensitivity_curve needs at least one positive");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return scores[i] > scores[j]; });

  std::vector<std::pair<int, double>> curve;
  curve.reserve(n);
  long tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (truth[static_cast<std::size_t>(order[k])]) ++tp;
    curve.emplace_back(static_cast<int>(k) + 1, static_cast<double>(tp) / static_cast<double>(pos));
  }
  return curve;
}

/// CSV export: one row per vertex, metadata as leading comment lines.
inline void write_roc_csv(std::ostream& os, const RocCurve& roc, const std::string& meta) {
  if (!meta.empty()) os << "# " << meta << "\n";
  os << "# auc=" << roc.auc << "\nfpr,tpr\n";
  for (const auto& [x, y] : roc.points) os << x << "," << y << "\n";
}

inline void write_sensitivity_csv(std::ostream& os,
                                  const std::vector<std::pair<int, double>>& curve,
                                  const std::string& meta) {
  if (!meta.empty()) os << "# " << meta << "\n";
  os << "k,tpr\n";
  for (const auto& [k, t] : curve) os << k << "," << t << "\n";
}

}  // namespace ep
