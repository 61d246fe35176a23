#include "qda/mcmc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <queue>
#include <string>

#include "qda/errors.hpp"
#include "qda/rng.hpp"

namespace qda::mcmc {
namespace {

int qubits_for(std::size_t dim) {
  if (dim < 2 || (dim & (dim - 1)) != 0) throw ShapeError("target size must be a power of two >= 2");
  return std::countr_zero(dim);
}

// min(1, p(to)/p(from)) from log weights.
double acceptance(const TargetDistribution& target, BasisIndex from, BasisIndex to) {
  const double lr = target.log_weights[static_cast<Eigen::Index>(to)] - target.log_weights[static_cast<Eigen::Index>(from)];
  return lr >= 0.0 ? 1.0 : std::exp(lr);
}

double binomial(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

void check_state(const TargetDistribution& target, BasisIndex s) {
  if (s >= target.size()) throw IndexError("chain state " + std::to_string(s) + " out of range");
}

StateVector support_superposition(const std::vector<BasisIndex>& support, int num_qubits) {
  Eigen::VectorXcd amps = Eigen::VectorXcd::Zero(Eigen::Index{1} << num_qubits);
  const double a = 1.0 / std::sqrt(static_cast<double>(support.size()));
  for (BasisIndex s : support) amps[static_cast<Eigen::Index>(s)] = a;
  return {num_qubits, std::move(amps)};
}

}  // namespace

Eigen::VectorXd TargetDistribution::normalized() const {
  // std::exp, not the vectorized one: exact zeros for kLogZero entries.
  return (log_weights.array() - normalizer).unaryExpr([](double v) { return std::exp(v); });
}

TargetDistribution make_target(Eigen::VectorXd log_weights) {
  const int n = qubits_for(static_cast<std::size_t>(log_weights.size()));
  check_qubit_count(n);
  for (Eigen::Index k = 0; k < log_weights.size(); ++k) {
    double& v = log_weights[k];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw PreconditionError("target log weight " + std::to_string(k) + " is not finite");
    if (v == -std::numeric_limits<double>::infinity()) v = kLogZero;
  }
  const double top = log_weights.maxCoeff();
  if (top <= kLogZero) throw PreconditionError("target has no mass");
  const double z = top + std::log((log_weights.array() - top).unaryExpr([](double v) { return std::exp(v); }).sum());
  return {n, std::move(log_weights), z};
}

TargetDistribution target_from_cost(const DiagonalObservable& cost_table) { return make_target(-cost_table.values); }

std::vector<BasisIndex> kernel_support(const ProposalKernel& kernel, BasisIndex current, int num_qubits) {
  const BasisIndex dim = BasisIndex{1} << num_qubits;
  std::vector<BasisIndex> out;
  if (kernel.kind == ProposalKernel::Kind::uniform_global) {
    out.resize(dim);
    std::iota(out.begin(), out.end(), BasisIndex{0});
    return out;
  }
  if (kernel.flip_count < 1 || kernel.flip_count > num_qubits)
    throw PreconditionError("bitflip kernel flip_count must be in [1, num_qubits]");
  for (BasisIndex mask = 0; mask < dim; ++mask)
    if (std::popcount(mask) == kernel.flip_count) out.push_back(current ^ mask);
  std::sort(out.begin(), out.end());
  return out;
}

double proposal_probability(const ProposalKernel& kernel, BasisIndex from, BasisIndex to, int num_qubits) {
  if (kernel.kind == ProposalKernel::Kind::uniform_global) return std::ldexp(1.0, -num_qubits);
  return std::popcount(from ^ to) == kernel.flip_count ? 1.0 / binomial(num_qubits, kernel.flip_count) : 0.0;
}

StepResult mh_step(const TargetDistribution& target, const ProposalKernel& kernel, BasisIndex current,
                   std::uint64_t seed) {
  check_state(target, current);
  CounterRng rng(seed);
  BasisIndex proposal;
  if (kernel.kind == ProposalKernel::Kind::uniform_global) {
    proposal = rng.below(target.size());
  } else {
    if (kernel.flip_count < 1 || kernel.flip_count > target.num_qubits)
      throw PreconditionError("bitflip kernel flip_count must be in [1, num_qubits]");
    std::vector<int> bits(static_cast<std::size_t>(target.num_qubits));
    std::iota(bits.begin(), bits.end(), 0);
    proposal = current;
    for (int i = 0; i < kernel.flip_count; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(bits.size() - static_cast<std::size_t>(i));
      std::swap(bits[static_cast<std::size_t>(i)], bits[j]);
      proposal ^= BasisIndex{1} << bits[static_cast<std::size_t>(i)];
    }
  }
  const double u = rng.uniform();
  if (u < acceptance(target, current, proposal)) return {proposal, true, 1};
  return {current, false, 1};
}

int grover_iterations(double marked_mass) {
  if (!(marked_mass > 0.0)) throw PreconditionError("grover_iterations: marked mass must be > 0");
  return static_cast<int>(std::floor(std::numbers::pi / (4.0 * std::sqrt(std::min(1.0, marked_mass)))));
}

Eigen::VectorXd quantum_kernel_row(const TargetDistribution& target, const ProposalKernel& kernel,
                                   BasisIndex current) {
  check_state(target, current);
  const auto support = kernel_support(kernel, current, target.num_qubits);
  const auto m = support.size();
  std::vector<std::pair<double, BasisIndex>> ranked;
  ranked.reserve(m);
  for (BasisIndex s : support) ranked.emplace_back(acceptance(target, current, s), s);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  // For u in [a_{t+1}, a_t) the acceptable set is the top t states.
  std::vector<double> per_member(m + 1, 0.0);  // move mass per member when |A| = t
  double stay = 1.0 - (m ? ranked[0].first : 0.0);
  for (std::size_t t = 1; t <= m; ++t) {
    const double length = ranked[t - 1].first - (t < m ? ranked[t].first : 0.0);
    if (length <= 0.0) continue;
    const double eps = static_cast<double>(t) / static_cast<double>(m);
    const double success = grover_success_probability(eps, grover_iterations(eps));
    per_member[t] = length * success / static_cast<double>(t);
    stay += length * (1.0 - success);
  }
  Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(target.size()));
  double suffix = 0.0;
  for (std::size_t r = m; r >= 1; --r) {
    suffix += per_member[r];
    row[static_cast<Eigen::Index>(ranked[r - 1].second)] += suffix;
  }
  row[static_cast<Eigen::Index>(current)] += stay;
  return row;
}

StepResult qmcmc_step(const TargetDistribution& target, const ProposalKernel& kernel, BasisIndex current,
                      std::uint64_t seed, const QuantumStepOptions& options) {
  check_state(target, current);
  CounterRng rng(seed);
  const double drawn = rng.uniform();
  const double u = options.fixed_u >= 0.0 ? options.fixed_u : drawn;
  const auto support = kernel_support(kernel, current, target.num_qubits);
  std::vector<char> marked(target.size(), 0);
  std::size_t marked_count = 0;
  for (BasisIndex s : support)
    if (acceptance(target, current, s) > u) {
      marked[s] = 1;
      ++marked_count;
    }
  const BasisPredicate is_marked = [&](BasisIndex k) { return marked[k] != 0; };
  const StateVector reference = support_superposition(support, target.num_qubits);

  double eps = static_cast<double>(marked_count) / static_cast<double>(support.size());
  if (options.epsilon_shots > 0 && marked_count > 0) {
    const auto rec = measure(reference, options.epsilon_shots, derive_key(seed, 2));
    std::uint64_t hits = 0;
    for (const auto& [k, c] : rec.counts)
      if (marked[k]) hits += c;
    eps = static_cast<double>(hits) / static_cast<double>(options.epsilon_shots);
  }
  if (marked_count == 0 || eps <= 0.0) return {current, false, 1};

  const int k = grover_iterations(eps);
  const StateVector amplified = amplitude_amplify(reference, is_marked, k);
  const BasisIndex outcome = measure(amplified, 1, derive_key(seed, 1)).counts.begin()->first;
  const int calls = k + 1;
  if (!marked[outcome]) return {current, false, calls};
  if (options.mode == QuantumMode::uncorrected || outcome == current) return {outcome, true, calls};

  const double forward = quantum_kernel_row(target, kernel, current)[static_cast<Eigen::Index>(outcome)];
  const double reverse = quantum_kernel_row(target, kernel, outcome)[static_cast<Eigen::Index>(current)];
  const double lr = target.log_weights[static_cast<Eigen::Index>(outcome)] -
                    target.log_weights[static_cast<Eigen::Index>(current)];
  const double ratio = std::exp(lr) * reverse / forward;
  if (rng.uniform() < std::min(1.0, ratio)) return {outcome, true, calls};
  return {current, false, calls};
}

ChainRun run_chain(const TargetDistribution& target, const ProposalKernel& kernel, std::uint64_t steps,
                   std::uint64_t burn_in, std::uint64_t seed, StepKind kind, BasisIndex initial,
                   const QuantumStepOptions& options) {
  if (!(steps > burn_in)) throw PreconditionError("run_chain needs steps > burn_in");
  check_state(target, initial);
  QuantumStepOptions qopts = options;
  if (kind == StepKind::quantum_corrected) qopts.mode = QuantumMode::corrected;
  if (kind == StepKind::quantum) qopts.mode = QuantumMode::uncorrected;

  ChainRun run;
  run.seed = seed;
  const auto kept = steps - burn_in;
  run.states.reserve(kept);
  run.step_accepted.reserve(kept);
  run.step_oracle_calls.reserve(kept);
  BasisIndex state = initial;
  for (std::uint64_t t = 0; t < steps; ++t) {
    const std::uint64_t step_seed = derive_key(seed, t);
    const StepResult r = kind == StepKind::classical ? mh_step(target, kernel, state, step_seed)
                                                     : qmcmc_step(target, kernel, state, step_seed, qopts);
    state = r.next;
    if (t < burn_in) continue;
    run.states.push_back(state);
    run.step_accepted.push_back(r.accepted ? 1 : 0);
    run.step_oracle_calls.push_back(r.oracle_calls);
    ++run.proposals;
    run.accepted += r.accepted ? 1 : 0;
    run.oracle_calls += static_cast<std::uint64_t>(r.oracle_calls);
  }
  return run;
}

void write_chain_csv(std::ostream& out, const ChainRun& run) {
  out << "step,state,accepted,oracle_calls\n";
  for (std::size_t i = 0; i < run.states.size(); ++i)
    out << i << ',' << run.states[i] << ',' << static_cast<int>(run.step_accepted[i]) << ','
        << run.step_oracle_calls[i] << '\n';
}

Eigen::MatrixXd transition_matrix(StepKind kind, const TargetDistribution& target, const ProposalKernel& kernel) {
  if (target.num_qubits > 8) throw CapacityError("transition_matrix supports at most 8 qubits (256 states)");
  const auto dim = static_cast<Eigen::Index>(target.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(dim, dim);
  if (kind == StepKind::classical) {
    for (Eigen::Index x = 0; x < dim; ++x) {
      double moved = 0.0;
      for (BasisIndex y : kernel_support(kernel, static_cast<BasisIndex>(x), target.num_qubits)) {
        if (static_cast<Eigen::Index>(y) == x) continue;
        const double v = proposal_probability(kernel, static_cast<BasisIndex>(x), y, target.num_qubits) *
                         acceptance(target, static_cast<BasisIndex>(x), y);
        p(x, static_cast<Eigen::Index>(y)) = v;
        moved += v;
      }
      p(x, x) = 1.0 - moved;
    }
    return p;
  }
  Eigen::MatrixXd q(dim, dim);
  for (Eigen::Index x = 0; x < dim; ++x) q.row(x) = quantum_kernel_row(target, kernel, static_cast<BasisIndex>(x)).transpose();
  if (kind == StepKind::quantum) return q;
  // Outer MH on the amplified proposal: P(x,y) = min(Q(x,y), p(y)/p(x) Q(y,x)).
  for (Eigen::Index x = 0; x < dim; ++x) {
    double moved = 0.0;
    for (Eigen::Index y = 0; y < dim; ++y) {
      if (y == x || q(x, y) == 0.0) continue;
      const double lr = target.log_weights[y] - target.log_weights[x];
      p(x, y) = std::min(q(x, y), std::exp(lr) * q(y, x));
      moved += p(x, y);
    }
    p(x, x) = 1.0 - moved;
  }
  return p;
}

double check_detailed_balance(const Eigen::MatrixXd& matrix, const TargetDistribution& target) {
  if (matrix.rows() != matrix.cols() || static_cast<std::size_t>(matrix.rows()) != target.size())
    throw ShapeError("check_detailed_balance: matrix does not match target");
  const Eigen::VectorXd pi = target.normalized();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < matrix.rows(); ++i)
    for (Eigen::Index j = i + 1; j < matrix.cols(); ++j)
      worst = std::max(worst, std::abs(pi[i] * matrix(i, j) - pi[j] * matrix(j, i)));
  return worst;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  // Solve (P^T - I) pi = 0 with one equation replaced by sum(pi) = 1.
  Eigen::MatrixXd a = matrix.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b[n - 1] = 1.0;
  Eigen::VectorXd pi = a.fullPivLu().solve(b);
  return pi / pi.sum();
}

double leading_eigenvalue(const Eigen::MatrixXd& matrix) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(matrix, false);
  const Eigen::VectorXcd ev = es.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < ev.size(); ++i)
    if (std::abs(ev[i]) > std::abs(ev[best]) ||
        (std::abs(ev[i]) == std::abs(ev[best]) && ev[i].real() > ev[best].real()))
      best = i;
  return ev[best].real();
}

bool is_irreducible(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  auto reach_all = [&](bool forward) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<Eigen::Index> frontier;
    frontier.push(0);
    seen[0] = 1;
    Eigen::Index count = 1;
    while (!frontier.empty()) {
      const Eigen::Index i = frontier.front();
      frontier.pop();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = forward ? matrix(i, j) : matrix(j, i);
        if (w > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          ++count;
          frontier.push(j);
        }
      }
    }
    return count == n;
  };
  return reach_all(true) && reach_all(false);
}

double total_variation(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw ShapeError("total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

double autocorrelation_time(const std::vector<double>& series) {
  const auto n = series.size();
  if (n < 2) return static_cast<double>(n);
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : series) var += (x - mean) * (x - mean);
  if (var <= 0.0) return static_cast<double>(n);
  double tau = 1.0;
  for (std::size_t lag = 1; lag < n; ++lag) {
    double c = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) c += (series[t] - mean) * (series[t + lag] - mean);
    const double rho = c / var;
    if (rho <= 0.0) break;
    tau += 2.0 * rho;
  }
  return tau;
}

ChainDiagnostics diagnostics(const ChainRun& run, const Eigen::VectorXd& state_values) {
  if (run.states.size() < 10) throw PreconditionError("diagnostics need a chain of length >= 10");
  std::vector<double> series;
  series.reserve(run.states.size());
  for (BasisIndex s : run.states)
    series.push_back(state_values.size() ? state_values[static_cast<Eigen::Index>(s)] : static_cast<double>(s));
  ChainDiagnostics d;
  d.autocorrelation_time = autocorrelation_time(series);
  d.ess = static_cast<double>(series.size()) / d.autocorrelation_time;
  d.acceptance_rate = run.proposals ? static_cast<double>(run.accepted) / static_cast<double>(run.proposals) : 0.0;
  return d;
}

ChainDiagnostics diagnostics(const ChainRun& run) { return diagnostics(run, Eigen::VectorXd()); }

OracleCost amplified_acceptance_cost(int num_qubits, BasisIndex marked_count, std::uint64_t trials,
                                     std::uint64_t seed) {
  check_qubit_count(num_qubits);
  const BasisIndex dim = BasisIndex{1} << num_qubits;
  if (marked_count < 1 || marked_count > dim) throw PreconditionError("marked_count must be in [1, 2^n]");
  const BasisPredicate is_marked = [&](BasisIndex k) { return k < marked_count; };
  const double eps = static_cast<double>(marked_count) / static_cast<double>(dim);
  const int k = grover_iterations(eps);
  const StateVector amplified = amplitude_amplify(init_uniform(num_qubits), is_marked, k);
  OracleCost cost;
  for (std::uint64_t t = 0; t < trials; ++t) {
    cost.calls += static_cast<std::uint64_t>(k + 1);
    const BasisIndex outcome = measure(amplified, 1, derive_key(seed, t)).counts.begin()->first;
    if (is_marked(outcome)) ++cost.successes;
  }
  cost.mean_calls_per_success =
      cost.successes ? static_cast<double>(cost.calls) / static_cast<double>(cost.successes) : 0.0;
  return cost;
}

OracleCost rejection_acceptance_cost(int num_qubits, BasisIndex marked_count, std::uint64_t trials,
                                     std::uint64_t seed) {
  check_qubit_count(num_qubits);
  const BasisIndex dim = BasisIndex{1} << num_qubits;
  if (marked_count < 1 || marked_count > dim) throw PreconditionError("marked_count must be in [1, 2^n]");
  CounterRng rng(seed);
  OracleCost cost;
  for (std::uint64_t t = 0; t < trials; ++t) {
    do {
      ++cost.calls;
    } while (rng.below(dim) >= marked_count);
    ++cost.successes;
  }
  cost.mean_calls_per_success = static_cast<double>(cost.calls) / static_cast<double>(cost.successes);
  return cost;
}

}  // namespace qda::mcmc
