// qaoa.hpp
// QAOA over a tabulated diagonal cost: layered evolution, gradients, optimizer
// and measurement-based particle sampling.
//
// The cost generator is diagonal, so each cost layer is an elementwise phase.
// Phases use the table affinely rescaled to [0, pi]; expectations use the raw
// table. Angles are exp(-i gamma H_C) and exp(-i beta sum_j X_j).

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "qda/encoding.hpp"
#include "qda/statevector.hpp"

namespace qda::qaoa {

struct QaoaParams {
  int depth = 0;
  Eigen::VectorXd gammas;
  Eigen::VectorXd betas;

  // Parameter vector ordered (gamma_1..gamma_p, beta_1..beta_p).
  Eigen::VectorXd flat() const;
  static QaoaParams from_flat(const Eigen::VectorXd& theta);
};

QaoaParams make_params(Eigen::VectorXd gammas, Eigen::VectorXd betas);
QaoaParams zero_params(int depth);

enum class GradientMethod { parameter_shift, adjoint };

// Table rescaled to [0, pi]; all zeros for a constant table.
Eigen::VectorXd phase_table(const DiagonalObservable& cost_table);
// Coefficients c_S of h(k) = sum_S c_S (-1)^{popcount(k & S)}.
Eigen::VectorXd walsh_coefficients(const Eigen::VectorXd& values);

StateVector evolve(const DiagonalObservable& cost_table, const QaoaParams& params);
double expectation(const DiagonalObservable& cost_table, const QaoaParams& params);

// Two-term shift rule (shift pi/2, factor 1/2) applied to every generator
// with eigenvalues +-1/2 that an angle drives: one X rotation per qubit for a
// mixer angle, one Z-string per nonzero Walsh term for a cost angle. Exact.
Eigen::VectorXd parameter_shift_gradient(const DiagonalObservable& cost_table, const QaoaParams& params);
// Same derivative from the forward state Jacobian (one tail pass per angle).
Eigen::VectorXd adjoint_gradient(const DiagonalObservable& cost_table, const QaoaParams& params);
Eigen::VectorXd gradient(const DiagonalObservable& cost_table, const QaoaParams& params, GradientMethod method);

// d psi / d theta, one column per flat parameter.
Eigen::MatrixXcd state_jacobian(const DiagonalObservable& cost_table, const QaoaParams& params);
// d p_k / d theta, one column per flat parameter.
Eigen::MatrixXd probability_jacobian(const DiagonalObservable& cost_table, const QaoaParams& params,
                                     GradientMethod method);
// Classical Fisher information of the measurement distribution.
Eigen::MatrixXd fisher_information(const DiagonalObservable& cost_table, const QaoaParams& params,
                                   GradientMethod method);

struct NaturalStep {
  QaoaParams params;
  bool fell_back = false;  // (F + ridge I) was singular; took a plain gradient step
};

NaturalStep natural_gradient_step(const QaoaParams& params, const Eigen::VectorXd& gradient,
                                  const Eigen::MatrixXd& fisher, double learning_rate, double ridge);
NaturalStep natural_gradient_step(const DiagonalObservable& cost_table, const QaoaParams& params,
                                  double learning_rate, double ridge,
                                  GradientMethod method = GradientMethod::parameter_shift);

struct QaoaConfig {
  int max_iterations = 200;
  double gradient_tolerance = 1e-7;
  bool natural = false;
  double learning_rate = 0.5;  // natural-gradient step before backtracking
  double ridge = 1e-3;
  GradientMethod gradient = GradientMethod::parameter_shift;
  std::uint64_t shots = 1024;
  std::uint64_t seed = 0;
};

struct QaoaResult {
  QaoaParams params;
  double expectation = 0.0;
  std::vector<std::pair<int, double>> trace;  // best-so-far expectation per iteration
  MeasurementRecord samples;
  bool natural_fallback = false;
  int gradient_evaluations = 0;
};

// Gradient descent with backtracking from angles drawn uniformly in [0, 0.1].
QaoaResult optimize(const DiagonalObservable& cost_table, int depth, const QaoaConfig& config);

// Measures the optimized state `count` times and decodes each outcome.
std::vector<Eigen::VectorXd> sample_particles(const DiagonalObservable& cost_table, const QaoaResult& result,
                                              std::uint64_t count, const EncodingScheme& scheme,
                                              std::uint64_t seed);

}  // namespace qda::qaoa
