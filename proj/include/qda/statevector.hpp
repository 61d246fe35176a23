// statevector.hpp
// Dense n-qubit statevector simulator.
//
// Basis index bit q holds qubit q (qubit 0 is the least-significant bit).
// All operations are pure: they take a state by const reference and return
// the transformed state. The in-place kernels in `qda::kernels` are what the
// pure functions are built on; higher modules use them inside hot loops.

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>

namespace qda {

using Complex = std::complex<double>;
using BasisIndex = std::uint64_t;

inline constexpr int kMaxQubits = 24;

struct StateVector {
  int num_qubits = 0;
  Eigen::VectorXcd amplitudes;

  std::size_t dimension() const { return static_cast<std::size_t>(amplitudes.size()); }
};

// Real diagonal operator, one value per basis index.
struct DiagonalObservable {
  Eigen::VectorXd values;

  std::size_t dimension() const { return static_cast<std::size_t>(values.size()); }
};

struct MeasurementRecord {
  std::uint64_t shots = 0;
  std::map<BasisIndex, std::uint64_t> counts;
  std::uint64_t seed = 0;

  // Outcomes in ascending index order, each repeated by its count.
  std::vector<BasisIndex> expand() const;
  BasisIndex most_frequent() const;
};

enum class Axis { X, Y, Z };

using BasisPredicate = std::function<bool(BasisIndex)>;

// Throws CapacityError unless 1 <= n <= kMaxQubits (0 is allowed only where noted).
void check_qubit_count(int num_qubits);

StateVector init_uniform(int num_qubits);
StateVector basis_state(int num_qubits, BasisIndex index);
// Wraps raw amplitudes; the length must be 2^n and the norm 1 within 1e-10.
StateVector make_state(Eigen::VectorXcd amplitudes);

DiagonalObservable make_observable(Eigen::VectorXd values);

StateVector apply_diagonal_phase(const StateVector& state, const DiagonalObservable& observable,
                                 double gamma);
// exp(-i beta X) on every qubit.
StateVector apply_mixer(const StateVector& state, double beta);
// exp(-i angle sigma/2) on one qubit.
StateVector apply_local_rotation(const StateVector& state, int qubit, Axis axis, double angle);
StateVector apply_cz(const StateVector& state, int qubit_a, int qubit_b);
StateVector oracle_phase_flip(const StateVector& state, const BasisPredicate& marked);
// 2|reference><reference| - I applied to `state`.
StateVector grover_reflection(const StateVector& state, const StateVector& reference);
// `iterations` rounds of reflection-about-input after the marked-set phase flip.
StateVector amplitude_amplify(const StateVector& state, const BasisPredicate& marked, int iterations);

MeasurementRecord measure(const StateVector& state, std::uint64_t shots, std::uint64_t seed);
Eigen::VectorXd probabilities(const StateVector& state);
double expectation_diagonal(const StateVector& state, const DiagonalObservable& observable);

Complex inner_product(const StateVector& a, const StateVector& b);  // <a|b>
double norm_squared(const StateVector& state);
double marked_mass(const StateVector& state, const BasisPredicate& marked);

// Closed-form Grover success probability sin^2((2k+1) asin(sqrt(mass))).
double grover_success_probability(double marked_mass, int iterations);

// Debug dump: one "index,re,im" row per amplitude.
void write_amplitudes_csv(std::ostream& out, const StateVector& state);

namespace kernels {

void single_qubit(Eigen::VectorXcd& amps, int qubit, const Eigen::Matrix2cd& gate);
void mixer(Eigen::VectorXcd& amps, int num_qubits, double beta);
void diagonal_phase(Eigen::VectorXcd& amps, const Eigen::VectorXd& values, double gamma);
void cz(Eigen::VectorXcd& amps, int qubit_a, int qubit_b);
Eigen::Matrix2cd rotation(Axis axis, double angle);

}  // namespace kernels

}  // namespace qda
