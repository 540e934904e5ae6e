#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace ep {

/// Signed data matrix: row tau holds sigma_tau * x_tau^T, so sign consistency
/// of a weight vector w is elementwise nonnegativity of matrix() * w.
/// M = 0 is admitted as the degenerate no-examples case.
template <typename Scalar>
class DesignMatrix {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  DesignMatrix() = default;

  explicit DesignMatrix(Matrix signed_rows) : mat_(std::move(signed_rows)) {
    if (mat_.cols() < 1) throw std::invalid_argument("design matrix needs N >= 1 columns");
    for (Eigen::Index t = 0; t < mat_.rows(); ++t)
      if (mat_.row(t).cwiseAbs().maxCoeff() == Scalar(0))
        throw std::invalid_argument("design matrix row " + std::to_string(t) + " is all zero");
  }

  Eigen::Index n() const { return mat_.cols(); }
  Eigen::Index m() const { return mat_.rows(); }
  const Matrix& matrix() const { return mat_; }

 private:
  Matrix mat_;
};

using DesignMatrixd = DesignMatrix<double>;

}  // namespace ep
