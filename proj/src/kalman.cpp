#include "qda/kalman.hpp"

#include "qda/errors.hpp"

namespace qda {

KalmanResult kalman_filter(const AssimilationProblem& problem) {
  if (!problem.model.is_linear()) throw PreconditionError("kalman_filter needs a linear model");
  problem.validate();
  const int d = problem.dim();
  Eigen::VectorXd mean = problem.background;
  Eigen::MatrixXd cov = problem.background_cov.matrix();
  KalmanResult out;
  for (int k = 0; k < problem.window; ++k) {
    if (k > 0) {
      mean = problem.model.matrix * mean;
      cov = problem.model.matrix * cov * problem.model.matrix.transpose();
      if (problem.process_cov.dim() == d) cov += problem.process_cov.matrix();
    }
    for (const auto& obs : problem.observations) {
      if (obs.time != k) continue;
      const Eigen::MatrixXd& h = obs.op.matrix;
      const Eigen::MatrixXd s = h * cov * h.transpose() + obs.cov.matrix();
      const Eigen::MatrixXd gain = s.ldlt().solve(h * cov).transpose();
      mean += gain * (obs.value - h * mean);
      cov = (Eigen::MatrixXd::Identity(d, d) - gain * h) * cov;
      cov = 0.5 * (cov + cov.transpose()).eval();
    }
    out.means.push_back(mean);
    out.covariances.push_back(cov);
  }
  return out;
}

}  // namespace qda
