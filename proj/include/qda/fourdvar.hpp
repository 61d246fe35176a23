// fourdvar.hpp
// Strong-constraint 4DVAR objective, its gradient and a classical minimizer.

#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qda/optim.hpp"
#include "qda/problem.hpp"

namespace qda::fourdvar {

// x_0 .. x_{window-1} under the deterministic model.
std::vector<Eigen::VectorXd> trajectory(const AssimilationProblem& problem, const Eigen::VectorXd& x0);

// 1/2 |x0 - xb|^2_{B^-1} + 1/2 sum_k |y_k - H_k x_k|^2_{R_k^-1}
double cost(const AssimilationProblem& problem, const Eigen::VectorXd& x0);

// Adjoint gradient for linear models, central differences (relative step 1e-5) otherwise.
Eigen::VectorXd gradient(const AssimilationProblem& problem, const Eigen::VectorXd& x0);
Eigen::VectorXd finite_difference_gradient(const AssimilationProblem& problem, const Eigen::VectorXd& x0,
                                           double relative_step = 1e-5);

struct MinimizeResult {
  Eigen::VectorXd x;
  std::vector<double> cost_trace;
  int iterations = 0;
  bool converged = false;
  // A trial point diverged during line search; x is the best point found.
  bool diverged = false;
};

DescentOptions default_minimize_options();
MinimizeResult minimize(const AssimilationProblem& problem, const Eigen::VectorXd& x_init,
                        const DescentOptions& options = default_minimize_options());

// Solves the normal equations of a linear-model problem directly.
Eigen::VectorXd solve_linear(const AssimilationProblem& problem);

}  // namespace qda::fourdvar
