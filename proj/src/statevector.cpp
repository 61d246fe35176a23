#include "qda/statevector.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "qda/errors.hpp"
#include "qda/rng.hpp"

namespace qda {
namespace {

constexpr double kNormTolerance = 1e-10;

int log2_exact(std::size_t n) {
  if (n == 0 || (n & (n - 1)) != 0) return -1;
  int q = 0;
  while ((std::size_t{1} << q) < n) ++q;
  return q;
}

void check_qubit(const StateVector& state, int qubit) {
  if (qubit < 0 || qubit >= state.num_qubits)
    throw IndexError("qubit " + std::to_string(qubit) + " out of range for " +
                     std::to_string(state.num_qubits) + "-qubit register");
}

void check_dimension(const StateVector& state, std::size_t dim, const char* what) {
  if (state.dimension() != dim)
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(dim) +
                     " does not match state dimension " + std::to_string(state.dimension()));
}

}  // namespace

void check_qubit_count(int num_qubits) {
  if (num_qubits < 1 || num_qubits > kMaxQubits)
    throw CapacityError("qubit count " + std::to_string(num_qubits) + " outside [1, " +
                        std::to_string(kMaxQubits) + "]");
}

std::vector<BasisIndex> MeasurementRecord::expand() const {
  std::vector<BasisIndex> out;
  out.reserve(shots);
  for (const auto& [index, count] : counts) out.insert(out.end(), count, index);
  return out;
}

BasisIndex MeasurementRecord::most_frequent() const {
  if (counts.empty()) throw PreconditionError("empty measurement record");
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

StateVector init_uniform(int num_qubits) {
  check_qubit_count(num_qubits);
  const auto dim = Eigen::Index{1} << num_qubits;
  return {num_qubits, Eigen::VectorXcd::Constant(dim, Complex(std::pow(2.0, -0.5 * num_qubits), 0.0))};
}

StateVector basis_state(int num_qubits, BasisIndex index) {
  check_qubit_count(num_qubits);
  const auto dim = Eigen::Index{1} << num_qubits;
  if (index >= static_cast<BasisIndex>(dim))
    throw IndexError("basis index " + std::to_string(index) + " out of range");
  StateVector s{num_qubits, Eigen::VectorXcd::Zero(dim)};
  s.amplitudes[static_cast<Eigen::Index>(index)] = 1.0;
  return s;
}

StateVector make_state(Eigen::VectorXcd amplitudes) {
  const int q = log2_exact(static_cast<std::size_t>(amplitudes.size()));
  if (q < 0) throw ShapeError("amplitude count is not a power of two");
  check_qubit_count(q);
  const double n2 = amplitudes.squaredNorm();
  if (std::abs(n2 - 1.0) > kNormTolerance)
    throw PreconditionError("amplitudes are not normalized (norm^2 = " + std::to_string(n2) + ")");
  return {q, std::move(amplitudes)};
}

DiagonalObservable make_observable(Eigen::VectorXd values) {
  if (!values.allFinite()) throw PreconditionError("observable values must be finite");
  return {std::move(values)};
}

namespace kernels {

Eigen::Matrix2cd rotation(Axis axis, double angle) {
  const double c = std::cos(angle / 2.0);
  const double s = std::sin(angle / 2.0);
  const Complex i(0.0, 1.0);
  Eigen::Matrix2cd m;
  switch (axis) {
    case Axis::X:
      m << c, -i * s, -i * s, c;
      break;
    case Axis::Y:
      m << c, -s, s, c;
      break;
    case Axis::Z:
      m << std::exp(-i * (angle / 2.0)), 0.0, 0.0, std::exp(i * (angle / 2.0));
      break;
  }
  return m;
}

void single_qubit(Eigen::VectorXcd& amps, int qubit, const Eigen::Matrix2cd& gate) {
  const Eigen::Index stride = Eigen::Index{1} << qubit;
  const Eigen::Index dim = amps.size();
  const Complex g00 = gate(0, 0), g01 = gate(0, 1), g10 = gate(1, 0), g11 = gate(1, 1);
  for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
    for (Eigen::Index k = base; k < base + stride; ++k) {
      const Complex a0 = amps[k];
      const Complex a1 = amps[k + stride];
      amps[k] = g00 * a0 + g01 * a1;
      amps[k + stride] = g10 * a0 + g11 * a1;
    }
  }
}

void mixer(Eigen::VectorXcd& amps, int num_qubits, double beta) {
  if (beta == 0.0) return;
  Eigen::Matrix2cd gate;
  const double c = std::cos(beta);
  const double s = std::sin(beta);
  gate << Complex(c, 0.0), Complex(0.0, -s), Complex(0.0, -s), Complex(c, 0.0);
  for (int q = 0; q < num_qubits; ++q) single_qubit(amps, q, gate);
}

void diagonal_phase(Eigen::VectorXcd& amps, const Eigen::VectorXd& values, double gamma) {
  if (gamma == 0.0) return;
  for (Eigen::Index k = 0; k < amps.size(); ++k)
    amps[k] *= Complex(std::cos(gamma * values[k]), -std::sin(gamma * values[k]));
}

void cz(Eigen::VectorXcd& amps, int qubit_a, int qubit_b) {
  const BasisIndex mask = (BasisIndex{1} << qubit_a) | (BasisIndex{1} << qubit_b);
  for (Eigen::Index k = 0; k < amps.size(); ++k)
    if ((static_cast<BasisIndex>(k) & mask) == mask) amps[k] = -amps[k];
}

}  // namespace kernels

StateVector apply_diagonal_phase(const StateVector& state, const DiagonalObservable& observable,
                                 double gamma) {
  check_dimension(state, observable.dimension(), "apply_diagonal_phase");
  StateVector out = state;
  kernels::diagonal_phase(out.amplitudes, observable.values, gamma);
  return out;
}

StateVector apply_mixer(const StateVector& state, double beta) {
  StateVector out = state;
  kernels::mixer(out.amplitudes, out.num_qubits, beta);
  return out;
}

StateVector apply_local_rotation(const StateVector& state, int qubit, Axis axis, double angle) {
  check_qubit(state, qubit);
  StateVector out = state;
  if (angle != 0.0) kernels::single_qubit(out.amplitudes, qubit, kernels::rotation(axis, angle));
  return out;
}

StateVector apply_cz(const StateVector& state, int qubit_a, int qubit_b) {
  check_qubit(state, qubit_a);
  check_qubit(state, qubit_b);
  if (qubit_a == qubit_b) throw IndexError("controlled-Z needs two distinct qubits");
  StateVector out = state;
  kernels::cz(out.amplitudes, qubit_a, qubit_b);
  return out;
}

StateVector oracle_phase_flip(const StateVector& state, const BasisPredicate& marked) {
  StateVector out = state;
  for (Eigen::Index k = 0; k < out.amplitudes.size(); ++k)
    if (marked(static_cast<BasisIndex>(k))) out.amplitudes[k] = -out.amplitudes[k];
  return out;
}

StateVector grover_reflection(const StateVector& state, const StateVector& reference) {
  check_dimension(state, reference.dimension(), "grover_reflection");
  const Complex overlap = reference.amplitudes.dot(state.amplitudes);  // conjugates the first
  StateVector out = state;
  out.amplitudes = 2.0 * overlap * reference.amplitudes - state.amplitudes;
  return out;
}

StateVector amplitude_amplify(const StateVector& state, const BasisPredicate& marked, int iterations) {
  if (iterations < 0) throw PreconditionError("amplitude_amplify: negative iteration count");
  StateVector out = state;
  for (int it = 0; it < iterations; ++it) out = grover_reflection(oracle_phase_flip(out, marked), state);
  return out;
}

Eigen::VectorXd probabilities(const StateVector& state) { return state.amplitudes.cwiseAbs2(); }

MeasurementRecord measure(const StateVector& state, std::uint64_t shots, std::uint64_t seed) {
  if (shots < 1) throw PreconditionError("measure: shots must be >= 1");
  const Eigen::VectorXd p = probabilities(state);
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) cdf[static_cast<std::size_t>(k)] = (acc += p[k]);
  CounterRng rng(seed);
  MeasurementRecord rec{shots, {}, seed};
  for (std::uint64_t s = 0; s < shots; ++s) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // Skip zero-probability cells at the boundary and clamp the rounding tail.
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    while (p[static_cast<Eigen::Index>(k)] == 0.0 && k > 0) --k;
    ++rec.counts[k];
  }
  return rec;
}

double expectation_diagonal(const StateVector& state, const DiagonalObservable& observable) {
  check_dimension(state, observable.dimension(), "expectation_diagonal");
  return state.amplitudes.cwiseAbs2().dot(observable.values);
}

Complex inner_product(const StateVector& a, const StateVector& b) {
  check_dimension(a, b.dimension(), "inner_product");
  return a.amplitudes.dot(b.amplitudes);
}

double norm_squared(const StateVector& state) { return state.amplitudes.squaredNorm(); }

double marked_mass(const StateVector& state, const BasisPredicate& marked) {
  double mass = 0.0;
  for (Eigen::Index k = 0; k < state.amplitudes.size(); ++k)
    if (marked(static_cast<BasisIndex>(k))) mass += std::norm(state.amplitudes[k]);
  return mass;
}

double grover_success_probability(double mass, int iterations) {
  const double theta = std::asin(std::sqrt(std::clamp(mass, 0.0, 1.0)));
  const double s = std::sin((2.0 * iterations + 1.0) * theta);
  return s * s;
}

void write_amplitudes_csv(std::ostream& out, const StateVector& state) {
  out << "index,re,im\n";
  out.precision(17);
  for (Eigen::Index k = 0; k < state.amplitudes.size(); ++k)
    out << k << ',' << state.amplitudes[k].real() << ',' << state.amplitudes[k].imag() << '\n';
}

}  // namespace qda
