#include "qda/qaoa.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "qda/errors.hpp"
#include "qda/optim.hpp"
#include "qda/parallel.hpp"
#include "qda/rng.hpp"

namespace qda::qaoa {
namespace {

constexpr double kQuarterPi = std::numbers::pi / 4.0;
constexpr double kProbabilityFloor = 1e-14;

using LayerHook = std::function<void(Eigen::VectorXcd&, int)>;

int register_size(const DiagonalObservable& table) {
  const std::size_t dim = table.dimension();
  if (dim < 2 || (dim & (dim - 1)) != 0) throw ShapeError("QAOA cost table size must be a power of two >= 2");
  const int n = std::countr_zero(dim);
  check_qubit_count(n);
  return n;
}

// Runs the layered circuit, calling the hooks after each cost and mixer layer.
Eigen::VectorXcd run_circuit(const Eigen::VectorXd& phases, int num_qubits, const QaoaParams& params,
                             const LayerHook& after_cost = nullptr, const LayerHook& after_mixer = nullptr) {
  Eigen::VectorXcd amps = init_uniform(num_qubits).amplitudes;
  for (int l = 0; l < params.depth; ++l) {
    kernels::diagonal_phase(amps, phases, params.gammas[l]);
    if (after_cost) after_cost(amps, l);
    kernels::mixer(amps, num_qubits, params.betas[l]);
    if (after_mixer) after_mixer(amps, l);
  }
  return amps;
}

// Applies the circuit from just after cost layer `layer` (inclusive of its mixer) to the end.
void run_tail_from_mixer(Eigen::VectorXcd& amps, const Eigen::VectorXd& phases, int num_qubits,
                         const QaoaParams& params, int layer) {
  kernels::mixer(amps, num_qubits, params.betas[layer]);
  for (int l = layer + 1; l < params.depth; ++l) {
    kernels::diagonal_phase(amps, phases, params.gammas[l]);
    kernels::mixer(amps, num_qubits, params.betas[l]);
  }
}

void run_tail_from_cost(Eigen::VectorXcd& amps, const Eigen::VectorXd& phases, int num_qubits,
                        const QaoaParams& params, int layer) {
  for (int l = layer; l < params.depth; ++l) {
    kernels::diagonal_phase(amps, phases, params.gammas[l]);
    kernels::mixer(amps, num_qubits, params.betas[l]);
  }
}

Eigen::VectorXd z_string(BasisIndex mask, Eigen::Index dim) {
  Eigen::VectorXd z(dim);
  for (Eigen::Index k = 0; k < dim; ++k) z[k] = (std::popcount(static_cast<BasisIndex>(k) & mask) & 1) ? -1.0 : 1.0;
  return z;
}

// One shifted circuit of the gate-level shift rule.
struct ShiftTerm {
  int parameter;      // flat index
  double weight;      // chain-rule factor multiplying (L+ - L-)
  BasisIndex mask;    // Z-string for cost terms
  int qubit;          // X rotation for mixer terms; -1 for cost terms
};

std::vector<ShiftTerm> shift_terms(const Eigen::VectorXd& phases, int num_qubits, int depth) {
  const Eigen::VectorXd c = walsh_coefficients(phases);
  const double cmax = c.tail(c.size() - 1).cwiseAbs().maxCoeff();
  std::vector<ShiftTerm> terms;
  for (int l = 0; l < depth; ++l) {
    for (Eigen::Index s = 1; s < c.size(); ++s)
      if (std::abs(c[s]) > 1e-12 * cmax && cmax > 0.0) terms.push_back({l, c[s], static_cast<BasisIndex>(s), -1});
    for (int q = 0; q < num_qubits; ++q) terms.push_back({depth + l, 1.0, 0, q});
  }
  return terms;
}

// Shifted circuit output for one term and sign (+1 / -1).
Eigen::VectorXcd shifted_state(const Eigen::VectorXd& phases, int num_qubits, const QaoaParams& params,
                               const ShiftTerm& term, double sign) {
  const int depth = params.depth;
  if (term.qubit < 0) {
    const Eigen::VectorXd z = z_string(term.mask, phases.size());
    return run_circuit(phases, num_qubits, params, [&](Eigen::VectorXcd& a, int l) {
      if (l == term.parameter) kernels::diagonal_phase(a, z, sign * kQuarterPi);
    });
  }
  const Eigen::Matrix2cd gate = kernels::rotation(Axis::X, sign * std::numbers::pi / 2.0);
  return run_circuit(phases, num_qubits, params, nullptr, [&](Eigen::VectorXcd& a, int l) {
    if (depth + l == term.parameter) kernels::single_qubit(a, term.qubit, gate);
  });
}

// Evaluates `reduce(shifted state)` for every term and sign, then combines
// w * (f+ - f-) into the parameter slots in a fixed order.
template <typename Value, typename Reduce>
std::vector<Value> shift_rule(const Eigen::VectorXd& phases, int num_qubits, const QaoaParams& params,
                              const Value& zero, Reduce reduce) {
  const auto terms = shift_terms(phases, num_qubits, params.depth);
  std::vector<Value> out(static_cast<std::size_t>(2 * params.depth), zero);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < terms.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, terms.size() - start);
    std::vector<Value> plus(count, zero), minus(count, zero);
    parallel_for(2 * count, [&](std::size_t job) {
      const std::size_t t = job / 2;
      const double sign = job % 2 == 0 ? 1.0 : -1.0;
      Value v = reduce(shifted_state(phases, num_qubits, params, terms[start + t], sign));
      (sign > 0 ? plus : minus)[t] = std::move(v);
    });
    for (std::size_t t = 0; t < count; ++t) {
      const auto& term = terms[start + t];
      out[static_cast<std::size_t>(term.parameter)] += term.weight * (plus[t] - minus[t]);
    }
  }
  return out;
}

void check_params(const QaoaParams& params) {
  if (params.depth < 0 || params.gammas.size() != params.depth || params.betas.size() != params.depth)
    throw ShapeError("QAOA angle vectors must have length depth");
  if (!params.gammas.allFinite() || !params.betas.allFinite()) throw PreconditionError("QAOA angles must be finite");
}

}  // namespace

Eigen::VectorXd QaoaParams::flat() const {
  Eigen::VectorXd theta(2 * depth);
  theta << gammas, betas;
  return theta;
}

QaoaParams QaoaParams::from_flat(const Eigen::VectorXd& theta) {
  if (theta.size() % 2 != 0) throw ShapeError("flat QAOA parameter vector must have even length");
  const auto p = theta.size() / 2;
  return make_params(theta.head(p), theta.tail(p));
}

QaoaParams make_params(Eigen::VectorXd gammas, Eigen::VectorXd betas) {
  QaoaParams p{static_cast<int>(gammas.size()), std::move(gammas), std::move(betas)};
  check_params(p);
  return p;
}

QaoaParams zero_params(int depth) {
  if (depth < 0) throw PreconditionError("QAOA depth must be >= 0");
  return {depth, Eigen::VectorXd::Zero(depth), Eigen::VectorXd::Zero(depth)};
}

Eigen::VectorXd phase_table(const DiagonalObservable& cost_table) {
  const double lo = cost_table.values.minCoeff();
  const double hi = cost_table.values.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Zero(cost_table.values.size());
  return (cost_table.values.array() - lo) * (std::numbers::pi / (hi - lo));
}

Eigen::VectorXd walsh_coefficients(const Eigen::VectorXd& values) {
  Eigen::VectorXd c = values;
  const Eigen::Index n = c.size();
  for (Eigen::Index h = 1; h < n; h *= 2)
    for (Eigen::Index i = 0; i < n; i += 2 * h)
      for (Eigen::Index j = i; j < i + h; ++j) {
        const double a = c[j], b = c[j + h];
        c[j] = a + b;
        c[j + h] = a - b;
      }
  return c / static_cast<double>(n);
}

StateVector evolve(const DiagonalObservable& cost_table, const QaoaParams& params) {
  check_params(params);
  const int n = register_size(cost_table);
  return {n, run_circuit(phase_table(cost_table), n, params)};
}

double expectation(const DiagonalObservable& cost_table, const QaoaParams& params) {
  return expectation_diagonal(evolve(cost_table, params), cost_table);
}

Eigen::VectorXd parameter_shift_gradient(const DiagonalObservable& cost_table, const QaoaParams& params) {
  check_params(params);
  const int n = register_size(cost_table);
  const Eigen::VectorXd phases = phase_table(cost_table);
  const auto parts = shift_rule(phases, n, params, 0.0, [&](const Eigen::VectorXcd& amps) {
    return amps.cwiseAbs2().dot(cost_table.values);
  });
  return Eigen::Map<const Eigen::VectorXd>(parts.data(), static_cast<Eigen::Index>(parts.size()));
}

Eigen::MatrixXcd state_jacobian(const DiagonalObservable& cost_table, const QaoaParams& params) {
  check_params(params);
  const int n = register_size(cost_table);
  const Eigen::VectorXd phases = phase_table(cost_table);
  const int p = params.depth;
  Eigen::MatrixXcd jac(phases.size(), 2 * p);
  const Complex minus_i(0.0, -1.0);

  // Forward pass storing the state after each cost layer and each mixer layer.
  std::vector<Eigen::VectorXcd> after_cost(static_cast<std::size_t>(p)), after_mixer(static_cast<std::size_t>(p));
  run_circuit(
      phases, n, params, [&](Eigen::VectorXcd& a, int l) { after_cost[static_cast<std::size_t>(l)] = a; },
      [&](Eigen::VectorXcd& a, int l) { after_mixer[static_cast<std::size_t>(l)] = a; });

  parallel_for(static_cast<std::size_t>(2 * p), [&](std::size_t col) {
    const int l = static_cast<int>(col) % p;
    Eigen::VectorXcd v;
    if (static_cast<int>(col) < p) {
      v = minus_i * (phases.array() * after_cost[static_cast<std::size_t>(l)].array()).matrix();
      run_tail_from_mixer(v, phases, n, params, l);
    } else {
      const Eigen::VectorXcd& b = after_mixer[static_cast<std::size_t>(l)];
      v = Eigen::VectorXcd::Zero(b.size());
      for (int q = 0; q < n; ++q) {
        const Eigen::Index bit = Eigen::Index{1} << q;
        for (Eigen::Index k = 0; k < b.size(); ++k) v[k] += b[k ^ bit];
      }
      v *= minus_i;
      run_tail_from_cost(v, phases, n, params, l + 1);
    }
    jac.col(static_cast<Eigen::Index>(col)) = v;
  });
  return jac;
}

Eigen::VectorXd adjoint_gradient(const DiagonalObservable& cost_table, const QaoaParams& params) {
  const StateVector psi = evolve(cost_table, params);
  const Eigen::MatrixXcd jac = state_jacobian(cost_table, params);
  const Eigen::VectorXcd weighted = (psi.amplitudes.array() * cost_table.values.array()).matrix();
  return 2.0 * (weighted.adjoint() * jac).real().transpose();
}

Eigen::VectorXd gradient(const DiagonalObservable& cost_table, const QaoaParams& params, GradientMethod method) {
  return method == GradientMethod::adjoint ? adjoint_gradient(cost_table, params)
                                           : parameter_shift_gradient(cost_table, params);
}

Eigen::MatrixXd probability_jacobian(const DiagonalObservable& cost_table, const QaoaParams& params,
                                     GradientMethod method) {
  check_params(params);
  const int n = register_size(cost_table);
  const Eigen::Index dim = cost_table.values.size();
  Eigen::MatrixXd out(dim, 2 * params.depth);
  if (method == GradientMethod::adjoint) {
    const StateVector psi = evolve(cost_table, params);
    const Eigen::MatrixXcd jac = state_jacobian(cost_table, params);
    for (Eigen::Index c = 0; c < jac.cols(); ++c)
      out.col(c) = 2.0 * (psi.amplitudes.conjugate().array() * jac.col(c).array()).real();
    return out;
  }
  const auto parts = shift_rule(phase_table(cost_table), n, params, Eigen::VectorXd(Eigen::VectorXd::Zero(dim)),
                                [](const Eigen::VectorXcd& amps) { return Eigen::VectorXd(amps.cwiseAbs2()); });
  for (std::size_t c = 0; c < parts.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = parts[c];
  return out;
}

Eigen::MatrixXd fisher_information(const DiagonalObservable& cost_table, const QaoaParams& params,
                                   GradientMethod method) {
  const Eigen::VectorXd p = probabilities(evolve(cost_table, params));
  const Eigen::MatrixXd dp = probability_jacobian(cost_table, params, method);
  Eigen::MatrixXd scaled = Eigen::MatrixXd::Zero(dp.rows(), dp.cols());
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p[k] > kProbabilityFloor) scaled.row(k) = dp.row(k) / std::sqrt(p[k]);
  return scaled.transpose() * scaled;
}

NaturalStep natural_gradient_step(const QaoaParams& params, const Eigen::VectorXd& gradient,
                                  const Eigen::MatrixXd& fisher, double learning_rate, double ridge) {
  if (!(ridge > 0.0)) throw PreconditionError("natural gradient ridge must be > 0");
  const Eigen::Index m = gradient.size();
  if (fisher.rows() != m || fisher.cols() != m) throw ShapeError("Fisher matrix does not match gradient");
  const Eigen::MatrixXd regularized = fisher + ridge * Eigen::MatrixXd::Identity(m, m);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(regularized);
  Eigen::VectorXd delta;
  bool fell_back = false;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) delta = ldlt.solve(gradient);
  if (delta.size() != m || !delta.allFinite()) {
    delta = gradient;
    fell_back = true;
  }
  return {QaoaParams::from_flat(params.flat() - learning_rate * delta), fell_back};
}

NaturalStep natural_gradient_step(const DiagonalObservable& cost_table, const QaoaParams& params,
                                  double learning_rate, double ridge, GradientMethod method) {
  return natural_gradient_step(params, gradient(cost_table, params, method),
                               fisher_information(cost_table, params, method), learning_rate, ridge);
}

QaoaResult optimize(const DiagonalObservable& cost_table, int depth, const QaoaConfig& config) {
  if (depth < 1) throw PreconditionError("QAOA optimize needs depth >= 1");
  register_size(cost_table);
  CounterRng rng = CounterRng(config.seed).split(0);
  Eigen::VectorXd theta0(2 * depth);
  for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0[i] = 0.1 * rng.uniform();

  QaoaResult result;
  const auto f = [&](const Eigen::VectorXd& theta) { return expectation(cost_table, QaoaParams::from_flat(theta)); };
  const auto g = [&](const Eigen::VectorXd& theta) {
    ++result.gradient_evaluations;
    return gradient(cost_table, QaoaParams::from_flat(theta), config.gradient);
  };

  DescentOptions options;
  options.max_iterations = config.max_iterations;
  options.gradient_tolerance = config.gradient_tolerance;
  options.initial_step = config.natural ? 1.0 : config.learning_rate;
  options.barzilai_borwein = !config.natural;
  options.min_step = 1e-12;

  DirectionFn direction;
  if (config.natural) {
    direction = [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
      const QaoaParams current = QaoaParams::from_flat(theta);
      const NaturalStep step = natural_gradient_step(
          current, grad, fisher_information(cost_table, current, config.gradient), config.learning_rate, config.ridge);
      result.natural_fallback = result.natural_fallback || step.fell_back;
      return Eigen::VectorXd(step.params.flat() - theta);
    };
  }

  const DescentResult r = descend(f, g, theta0, options, direction);
  result.params = QaoaParams::from_flat(r.x);
  result.expectation = r.value;
  for (std::size_t i = 0; i < r.trace.size(); ++i) result.trace.emplace_back(static_cast<int>(i), r.trace[i]);
  result.samples = measure(evolve(cost_table, result.params), config.shots, derive_key(config.seed, 1));
  return result;
}

std::vector<Eigen::VectorXd> sample_particles(const DiagonalObservable& cost_table, const QaoaResult& result,
                                              std::uint64_t count, const EncodingScheme& scheme,
                                              std::uint64_t seed) {
  if (count < 1) throw PreconditionError("sample_particles: count must be >= 1");
  if (scheme.size() != cost_table.dimension()) throw ShapeError("sample_particles: scheme does not match cost table");
  const MeasurementRecord rec = measure(evolve(cost_table, result.params), count, seed);
  std::vector<Eigen::VectorXd> particles;
  particles.reserve(count);
  for (BasisIndex k : rec.expand()) particles.push_back(decode(k, scheme));
  return particles;
}

}  // namespace qda::qaoa
