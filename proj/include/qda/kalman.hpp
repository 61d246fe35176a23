// kalman.hpp
// Exact linear-Gaussian filtering posterior, used as the reference for particle methods.

#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qda/problem.hpp"

namespace qda {

struct KalmanResult {
  std::vector<Eigen::VectorXd> means;        // filtering mean at each step
  std::vector<Eigen::MatrixXd> covariances;  // filtering covariance at each step
};

// Prior N(x_b, B) at step 0; analysis with the observations of each step,
// then forecast with M and the process covariance.
KalmanResult kalman_filter(const AssimilationProblem& problem);

}  // namespace qda
