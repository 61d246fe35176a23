#include "qda/optim.hpp"

#include <cmath>
#include <limits>

#include "qda/errors.hpp"

namespace qda {
namespace {

std::optional<double> try_eval(const Objective& f, const Eigen::VectorXd& x, bool& diverged) {
  try {
    const double v = f(x);
    if (std::isfinite(v)) return v;
  } catch (const DivergenceError&) {
  }
  diverged = true;
  return std::nullopt;
}

}  // namespace

DescentResult descend(const Objective& f, const GradientFn& grad, Eigen::VectorXd x0, const DescentOptions& options,
                      const DirectionFn& direction) {
  DescentResult r;
  r.x = std::move(x0);
  r.value = f(r.x);
  r.trace.push_back(r.value);

  Eigen::VectorXd g = grad(r.x);
  Eigen::VectorXd prev_x, prev_g;
  for (int it = 0; it < options.max_iterations; ++it) {
    if (g.norm() < options.gradient_tolerance) {
      r.converged = true;
      return r;
    }
    const Eigen::VectorXd d = direction ? direction(r.x, g) : Eigen::VectorXd(-g);
    double slope = g.dot(d);
    Eigen::VectorXd dir = d;
    if (!(slope < 0.0)) {  // not a descent direction: fall back to steepest descent
      dir = -g;
      slope = -g.squaredNorm();
    }

    double step = options.initial_step;
    if (options.barzilai_borwein && prev_x.size() == r.x.size()) {
      const Eigen::VectorXd s = r.x - prev_x;
      const Eigen::VectorXd y = g - prev_g;
      const double sy = s.dot(y);
      if (sy > 0.0) step = s.squaredNorm() / sy;
    }

    bool accepted = false;
    while (step >= options.min_step) {
      const Eigen::VectorXd trial = r.x + step * dir;
      const auto v = try_eval(f, trial, r.hit_divergence);
      if (v && *v <= r.value + options.armijo * step * slope) {
        prev_x = r.x;
        prev_g = g;
        r.x = trial;
        r.value = *v;
        accepted = true;
        break;
      }
      step *= options.shrink;
    }
    if (!accepted) {
      r.stalled = true;
      return r;
    }
    r.trace.push_back(r.value);
    r.iterations = it + 1;
    g = grad(r.x);
  }
  r.converged = g.norm() < options.gradient_tolerance;
  return r;
}

}  // namespace qda
