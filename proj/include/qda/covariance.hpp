// covariance.hpp
// Symmetric positive-definite covariance with a cached Cholesky factor.

#pragma once

#include <Eigen/Dense>

#include "qda/rng.hpp"

namespace qda {

class Covariance {
 public:
  Covariance() = default;

  // Validates symmetry (1e-12) and strict positive definiteness.
  static Covariance from_matrix(Eigen::MatrixXd matrix);
  static Covariance diagonal(const Eigen::VectorXd& variances);
  static Covariance scaled_identity(int dim, double variance);
  // Flag value meaning "no noise". Has no inverse.
  static Covariance zero(int dim);

  int dim() const { return static_cast<int>(matrix_.rows()); }
  bool is_zero() const { return zero_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::MatrixXd& cholesky_factor() const { return factor_; }

  // Cov^{-1} v through the cached factor.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& m) const;
  // v^T Cov^{-1} v
  double mahalanobis_squared(const Eigen::VectorXd& v) const;
  double log_determinant() const;
  // Zero-mean draw L z; all zeros for the zero flag.
  Eigen::VectorXd sample(CounterRng& rng) const;

  bool operator==(const Covariance& other) const {
    return zero_ == other.zero_ && matrix_ == other.matrix_;
  }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd factor_;
  bool zero_ = false;
};

}  // namespace qda
