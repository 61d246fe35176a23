// optim.hpp
// Monotone descent with Armijo backtracking, shared by the variational modules.

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

namespace qda {

struct DescentOptions {
  int max_iterations = 1000;
  double gradient_tolerance = 1e-8;
  double armijo = 1e-4;
  double shrink = 0.5;
  double initial_step = 1.0;
  // Start each line search at the Barzilai-Borwein step instead of initial_step.
  bool barzilai_borwein = true;
  double min_step = 1e-16;
};

struct DescentResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;  // objective after each accepted iterate, starting with x0
  int iterations = 0;
  bool converged = false;      // gradient norm below tolerance
  bool stalled = false;        // line search could not decrease the objective
  bool hit_divergence = false; // some trial point failed to evaluate
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
// Maps (x, gradient) to a descent direction; defaults to -gradient.
using DirectionFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

// Objective evaluations that throw DivergenceError or return non-finite
// values count as failed trials and trigger a shrink.
DescentResult descend(const Objective& f, const GradientFn& grad, Eigen::VectorXd x0, const DescentOptions& options,
                      const DirectionFn& direction = nullptr);

}  // namespace qda
