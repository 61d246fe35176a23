// mcmc.hpp
// Metropolis-Hastings over a tabulated discrete target, the Grover-amplified
// acceptance step, exact transition-matrix oracles and chain diagnostics.
//
// All densities are handled in log space. The target lives on the basis
// indices of an n-qubit register.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "qda/statevector.hpp"

namespace qda::mcmc {

// Stand-in for log(0); exp() of any difference against it is exactly zero.
inline constexpr double kLogZero = -1e300;

struct TargetDistribution {
  int num_qubits = 0;
  Eigen::VectorXd log_weights;  // unnormalized
  double normalizer = 0.0;      // log sum exp(log_weights)

  std::size_t size() const { return static_cast<std::size_t>(log_weights.size()); }
  Eigen::VectorXd normalized() const;
};

// -inf entries become kLogZero; NaN or +inf are rejected.
TargetDistribution make_target(Eigen::VectorXd log_weights);
// Posterior exp(-J) over a tabulated cost.
TargetDistribution target_from_cost(const DiagonalObservable& cost_table);

struct ProposalKernel {
  enum class Kind { uniform_global, bitflip_neighborhood };
  Kind kind = Kind::uniform_global;
  int flip_count = 1;
};

// States reachable in one proposal from `current`.
std::vector<BasisIndex> kernel_support(const ProposalKernel& kernel, BasisIndex current, int num_qubits);
double proposal_probability(const ProposalKernel& kernel, BasisIndex from, BasisIndex to, int num_qubits);

struct StepResult {
  BasisIndex next = 0;
  bool accepted = false;
  int oracle_calls = 0;
};

StepResult mh_step(const TargetDistribution& target, const ProposalKernel& kernel, BasisIndex current,
                   std::uint64_t seed);

enum class QuantumMode {
  // Fixed-u acceptance-set amplification; conditional on success the move is
  // uniform over the acceptable set.
  uncorrected,
  // The amplified move is used as a proposal inside an outer MH test against
  // its exact kernel density, which makes the target exactly invariant.
  corrected,
};

struct QuantumStepOptions {
  QuantumMode mode = QuantumMode::uncorrected;
  // 0: marked mass read exactly from the statevector; otherwise estimated
  // from this many shots of the support superposition.
  std::uint64_t epsilon_shots = 0;
  // Threshold u in [0, 1) to use instead of drawing one; negative draws.
  double fixed_u = -1.0;
};

// Grover iteration count floor(pi / (4 sqrt(eps))).
int grover_iterations(double marked_mass);

StepResult qmcmc_step(const TargetDistribution& target, const ProposalKernel& kernel, BasisIndex current,
                      std::uint64_t seed, const QuantumStepOptions& options = {});

// Exact distribution of the uncorrected quantum step from `current`
// (integrated over u piecewise). Dense over the register.
Eigen::VectorXd quantum_kernel_row(const TargetDistribution& target, const ProposalKernel& kernel,
                                   BasisIndex current);

enum class StepKind { classical, quantum, quantum_corrected };

struct ChainRun {
  std::vector<BasisIndex> states;       // retained (post burn-in) states
  std::vector<char> step_accepted;      // per retained step
  std::vector<int> step_oracle_calls;   // per retained step
  std::uint64_t accepted = 0;
  std::uint64_t proposals = 0;
  std::uint64_t oracle_calls = 0;
  std::uint64_t seed = 0;
};

ChainRun run_chain(const TargetDistribution& target, const ProposalKernel& kernel, std::uint64_t steps,
                   std::uint64_t burn_in, std::uint64_t seed, StepKind kind = StepKind::classical,
                   BasisIndex initial = 0, const QuantumStepOptions& options = {});

// "step,state,accepted,oracle_calls" rows.
void write_chain_csv(std::ostream& out, const ChainRun& run);

// Row-stochastic matrix by enumeration; n <= 8.
Eigen::MatrixXd transition_matrix(StepKind kind, const TargetDistribution& target, const ProposalKernel& kernel);

// max_ij |p_i P_ij - p_j P_ji| against the normalized target.
double check_detailed_balance(const Eigen::MatrixXd& matrix, const TargetDistribution& target);
// Left eigenvector for eigenvalue 1, normalized to sum 1.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& matrix);
double leading_eigenvalue(const Eigen::MatrixXd& matrix);
// Single communicating class covering every state.
bool is_irreducible(const Eigen::MatrixXd& matrix);
double total_variation(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

struct ChainDiagnostics {
  double ess = 0.0;
  double autocorrelation_time = 0.0;
  double acceptance_rate = 0.0;
};

// Integrated autocorrelation time truncated at the first non-positive lag.
ChainDiagnostics diagnostics(const ChainRun& run);
// Same, on per-state values (e.g. the cost of each visited state).
ChainDiagnostics diagnostics(const ChainRun& run, const Eigen::VectorXd& state_values);
double autocorrelation_time(const std::vector<double>& series);

struct OracleCost {
  double mean_calls_per_success = 0.0;
  std::uint64_t calls = 0;
  std::uint64_t successes = 0;
};

// Cost of producing accepted moves when `marked_count` of 2^n uniformly
// proposed states are acceptable: amplified (quantum) or by rejection.
OracleCost amplified_acceptance_cost(int num_qubits, BasisIndex marked_count, std::uint64_t trials,
                                     std::uint64_t seed);
OracleCost rejection_acceptance_cost(int num_qubits, BasisIndex marked_count, std::uint64_t trials,
                                     std::uint64_t seed);

}  // namespace qda::mcmc
