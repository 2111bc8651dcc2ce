#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "pwls/error.hpp"

namespace pwls {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Singular-value ratio below which a design is treated as rank-deficient.
inline constexpr double kRankTolerance = 1e-12;

/**
 * A regression problem: predictors X (n x p) and response y (n).
 *
 * Construction validates n > p >= 1, finiteness, and full column rank, so any
 * Dataset that exists is safe to hand to the solvers.
 */
class Dataset {
 public:
  Dataset(Matrix x, Vector y) : x_(std::move(x)), y_(std::move(y)) {
    require(x_.rows() == y_.size(), "Dataset: X rows and y length differ");
    require(x_.cols() >= 1, "Dataset: need at least one predictor");
    require(x_.rows() > x_.cols(), "Dataset: need n > p");
    require(x_.allFinite() && y_.allFinite(), "Dataset: non-finite entry");
    Eigen::JacobiSVD<Matrix> svd(x_);
    const Vector& s = svd.singularValues();
    if (s(0) <= 0.0 || s(s.size() - 1) / s(0) < kRankTolerance) {
      fail(ErrorCode::SingularDesign, "singular design: X is rank-deficient");
    }
  }

  const Matrix& x() const noexcept { return x_; }
  const Vector& y() const noexcept { return y_; }
  Index n() const noexcept { return x_.rows(); }
  Index p() const noexcept { return x_.cols(); }

 private:
  Matrix x_;
  Vector y_;
};

/**
 * Minimizer of sum_i row_weights_i * (y_i - x_i' beta)^2.
 *
 * Rows are scaled by sqrt(weight) and the scaled system is solved with a
 * column-pivoted Householder QR. Rank is judged from the diagonal of R.
 */
inline Vector ols_solve(const Matrix& x, const Vector& y,
                        const std::optional<Vector>& row_weights = std::nullopt) {
  require(x.rows() == y.size(), "ols_solve: X rows and y length differ");
  require(x.rows() >= x.cols() && x.cols() >= 1, "ols_solve: need n >= p >= 1");

  Eigen::ColPivHouseholderQR<Matrix> qr;
  Vector rhs;
  if (row_weights) {
    const Vector& w = *row_weights;
    require(w.size() == x.rows(), "ols_solve: weight length differs from n");
    require(w.allFinite() && (w.array() >= 0.0).all(),
            "ols_solve: weights must be finite and nonnegative");
    require((w.array() > 0.0).count() >= x.cols(),
            "ols_solve: fewer than p positive weights");
    const Vector root = w.cwiseSqrt();
    qr.compute(root.asDiagonal() * x);
    rhs = root.cwiseProduct(y);
  } else {
    qr.compute(x);
    rhs = y;
  }

  const auto r_diag = qr.matrixR().diagonal().cwiseAbs();
  const double largest = r_diag(0);
  if (!(largest > 0.0) || r_diag(x.cols() - 1) / largest < kRankTolerance) {
    fail(ErrorCode::SingularDesign, "singular design");
  }
  return qr.solve(rhs);
}

inline Vector ols_solve(const Dataset& data,
                        const std::optional<Vector>& row_weights = std::nullopt) {
  return ols_solve(data.x(), data.y(), row_weights);
}

/// Leverages h_ii = x_i'(X'X)^{-1}x_i, read off the thin Q factor as squared row norms.
inline Vector hat_diag(const Matrix& x) {
  require(x.rows() >= x.cols() && x.cols() >= 1, "hat_diag: need n >= p >= 1");
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  const auto r_diag = qr.matrixR().diagonal().cwiseAbs();
  if (!(r_diag(0) > 0.0) || r_diag(x.cols() - 1) / r_diag(0) < kRankTolerance) {
    fail(ErrorCode::SingularDesign, "singular design: X'X is singular");
  }
  const Matrix q = qr.householderQ() * Matrix::Identity(x.rows(), x.cols());
  return q.rowwise().squaredNorm();
}

inline Vector hat_diag(const Dataset& data) { return hat_diag(data.x()); }

/// OLS residuals divided elementwise by sqrt(1 - h_ii).
inline Vector standardized_residuals(const Dataset& data) {
  const Vector h = hat_diag(data);
  if ((h.array() >= 1.0 - 1e-12).any()) {
    fail(ErrorCode::DegenerateLeverage, "degenerate leverage: some h_ii >= 1");
  }
  const Vector r = data.y() - data.x() * ols_solve(data);
  return r.array() / (1.0 - h.array()).sqrt();
}

/// ||(I - H) y / sqrt(diag(I - H))||_inf, the largest leverage-standardized OLS residual.
inline double lambda_max(const Dataset& data) {
  return standardized_residuals(data).cwiseAbs().maxCoeff();
}

/**
 * The same bound carried to the PWLS penalty scale for multipliers varpi.
 *
 * The flag threshold on |r_i| is sqrt(lambda * varpi_i / 2), so at
 * max_i 2 s_i^2 / varpi_i OLS with unit weights is a fixed point and nothing
 * is flagged. With varpi = 1 this equals 2 * lambda_max(data)^2.
 */
inline double lambda_max(const Dataset& data, const Vector& varpi) {
  require(varpi.size() == data.n(), "lambda_max: varpi length differs from n");
  require((varpi.array() > 0.0).all(), "lambda_max: varpi must be positive");
  const Vector s = standardized_residuals(data);
  return (2.0 * s.array().square() / varpi.array()).maxCoeff();
}

}  // namespace pwls
