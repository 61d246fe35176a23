#include "qda/fourdvar.hpp"

#include <algorithm>
#include <cmath>

#include "qda/errors.hpp"

namespace qda::fourdvar {
namespace {

void check_state(const AssimilationProblem& problem, const Eigen::VectorXd& x0) {
  if (x0.size() != problem.dim()) throw ShapeError("4DVAR: initial state dimension mismatch");
}

}  // namespace

std::vector<Eigen::VectorXd> trajectory(const AssimilationProblem& problem, const Eigen::VectorXd& x0) {
  check_state(problem, x0);
  return free_run(problem.model, x0, problem.window);
}

double cost(const AssimilationProblem& problem, const Eigen::VectorXd& x0) {
  const auto xs = trajectory(problem, x0);
  double j = 0.5 * problem.background_cov.mahalanobis_squared(x0 - problem.background);
  for (const auto& obs : problem.observations) {
    const Eigen::VectorXd innovation = obs.value - obs.op.apply(xs[static_cast<std::size_t>(obs.time)]);
    j += 0.5 * obs.cov.mahalanobis_squared(innovation);
  }
  if (!std::isfinite(j)) throw DivergenceError("4DVAR cost is not finite");
  return j;
}

Eigen::VectorXd finite_difference_gradient(const AssimilationProblem& problem, const Eigen::VectorXd& x0,
                                           double relative_step) {
  check_state(problem, x0);
  Eigen::VectorXd g(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    const double h = relative_step * std::max(1.0, std::abs(x0[i]));
    Eigen::VectorXd up = x0, down = x0;
    up[i] += h;
    down[i] -= h;
    g[i] = (cost(problem, up) - cost(problem, down)) / (up[i] - down[i]);
  }
  return g;
}

Eigen::VectorXd gradient(const AssimilationProblem& problem, const Eigen::VectorXd& x0) {
  if (!problem.model.is_linear()) return finite_difference_gradient(problem, x0);
  const auto xs = trajectory(problem, x0);
  // Backward sweep: lambda_k = H_k^T R_k^-1 (H_k x_k - y_k) + M^T lambda_{k+1}.
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(problem.dim());
  for (int k = problem.window - 1; k >= 0; --k) {
    for (const auto& obs : problem.observations) {
      if (obs.time != k) continue;
      const Eigen::VectorXd misfit = obs.op.apply(xs[static_cast<std::size_t>(k)]) - obs.value;
      lambda += obs.op.matrix.transpose() * obs.cov.solve(misfit);
    }
    if (k > 0) lambda = problem.model.matrix.transpose() * lambda;
  }
  return problem.background_cov.solve(Eigen::VectorXd(x0 - problem.background)) + lambda;
}

DescentOptions default_minimize_options() {
  DescentOptions o;
  o.max_iterations = 1000;
  o.gradient_tolerance = 1e-8;
  o.armijo = 1e-4;
  o.shrink = 0.5;
  o.initial_step = 1.0;
  o.barzilai_borwein = true;
  return o;
}

MinimizeResult minimize(const AssimilationProblem& problem, const Eigen::VectorXd& x_init,
                        const DescentOptions& options) {
  problem.validate();
  check_state(problem, x_init);
  const auto r = descend([&](const Eigen::VectorXd& x) { return cost(problem, x); },
                         [&](const Eigen::VectorXd& x) { return gradient(problem, x); }, x_init, options);
  return {r.x, r.trace, r.iterations, r.converged, r.hit_divergence};
}

Eigen::VectorXd solve_linear(const AssimilationProblem& problem) {
  if (!problem.model.is_linear()) throw PreconditionError("solve_linear needs a linear model");
  problem.validate();
  const int d = problem.dim();
  Eigen::MatrixXd hessian = problem.background_cov.solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d)));
  Eigen::VectorXd rhs = problem.background_cov.solve(problem.background);
  Eigen::MatrixXd propagator = Eigen::MatrixXd::Identity(d, d);
  for (int k = 0; k < problem.window; ++k) {
    if (k > 0) propagator = problem.model.matrix * propagator;
    for (const auto& obs : problem.observations) {
      if (obs.time != k) continue;
      const Eigen::MatrixXd hm = obs.op.matrix * propagator;
      hessian += hm.transpose() * obs.cov.solve(hm);
      rhs += hm.transpose() * obs.cov.solve(obs.value);
    }
  }
  return hessian.ldlt().solve(rhs);
}

}  // namespace qda::fourdvar
