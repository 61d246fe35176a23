#include "qda/covariance.hpp"

#include <cmath>
#include <string>

#include "qda/errors.hpp"

namespace qda {

Covariance Covariance::from_matrix(Eigen::MatrixXd matrix) {
  if (matrix.rows() != matrix.cols() || matrix.rows() < 1) throw ShapeError("covariance must be square and non-empty");
  if (!matrix.allFinite()) throw PreconditionError("covariance has non-finite entries");
  if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw PreconditionError("covariance is not symmetric within 1e-12");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(matrix, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw PreconditionError("covariance is not positive definite (min eigenvalue " +
                            std::to_string(eig.eigenvalues().minCoeff()) + ")");
  Covariance c;
  Eigen::LLT<Eigen::MatrixXd> llt(matrix);
  if (llt.info() != Eigen::Success) throw PreconditionError("covariance Cholesky factorization failed");
  c.factor_ = llt.matrixL();
  c.matrix_ = std::move(matrix);
  return c;
}

Covariance Covariance::diagonal(const Eigen::VectorXd& variances) {
  return from_matrix(variances.asDiagonal().toDenseMatrix());
}

Covariance Covariance::scaled_identity(int dim, double variance) {
  if (variance == 0.0) return zero(dim);
  return from_matrix(variance * Eigen::MatrixXd::Identity(dim, dim));
}

Covariance Covariance::zero(int dim) {
  if (dim < 1) throw ShapeError("covariance dimension must be >= 1");
  Covariance c;
  c.matrix_ = Eigen::MatrixXd::Zero(dim, dim);
  c.factor_ = Eigen::MatrixXd::Zero(dim, dim);
  c.zero_ = true;
  return c;
}

Eigen::VectorXd Covariance::solve(const Eigen::VectorXd& v) const {
  if (zero_) throw PreconditionError("zero covariance has no inverse");
  if (v.size() != dim()) throw ShapeError("covariance solve: dimension mismatch");
  const auto L = factor_.triangularView<Eigen::Lower>();
  return L.transpose().solve(L.solve(v));
}

Eigen::MatrixXd Covariance::solve(const Eigen::MatrixXd& m) const {
  if (zero_) throw PreconditionError("zero covariance has no inverse");
  if (m.rows() != dim()) throw ShapeError("covariance solve: dimension mismatch");
  const auto L = factor_.triangularView<Eigen::Lower>();
  return L.transpose().solve(L.solve(m));
}

double Covariance::mahalanobis_squared(const Eigen::VectorXd& v) const {
  if (zero_) throw PreconditionError("zero covariance has no inverse");
  if (v.size() != dim()) throw ShapeError("covariance: dimension mismatch");
  const Eigen::VectorXd w = factor_.triangularView<Eigen::Lower>().solve(v);
  return w.squaredNorm();
}

double Covariance::log_determinant() const {
  if (zero_) throw PreconditionError("zero covariance has no determinant");
  return 2.0 * factor_.diagonal().array().log().sum();
}

Eigen::VectorXd Covariance::sample(CounterRng& rng) const {
  Eigen::VectorXd z(dim());
  for (int i = 0; i < dim(); ++i) z[i] = rng.normal();
  if (zero_) return Eigen::VectorXd::Zero(dim());
  return factor_.triangularView<Eigen::Lower>() * z;
}

}  // namespace qda
