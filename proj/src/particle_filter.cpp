#include "qda/particle_filter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "qda/errors.hpp"
#include "qda/optim.hpp"
#include "qda/parallel.hpp"
#include "qda/rng.hpp"

namespace qda::pf {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int register_qubits(Eigen::Index count) {
  int n = 1;
  while ((Eigen::Index{1} << n) < count) ++n;
  return n;
}

ParticleEnsemble gather(const ParticleEnsemble& ensemble, const std::vector<int>& ancestors) {
  ParticleEnsemble out;
  out.particles.resize(ensemble.dim(), static_cast<Eigen::Index>(ancestors.size()));
  for (std::size_t i = 0; i < ancestors.size(); ++i)
    out.particles.col(static_cast<Eigen::Index>(i)) = ensemble.particles.col(ancestors[i]);
  out.weights = Eigen::VectorXd::Constant(out.particles.cols(), 1.0 / static_cast<double>(ancestors.size()));
  return out;
}

Eigen::VectorXd floored_target(const Eigen::VectorXd& target) {
  Eigen::VectorXd t = target.unaryExpr([](double v) { return v > 0.0 ? v : kKlFloor; });
  return t / t.sum();
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

Eigen::VectorXd ParticleEnsemble::mean() const {
  // Offsets from the first particle, so identical particles give it back exactly.
  const Eigen::VectorXd anchor = particles.col(0);
  return anchor + (particles.colwise() - anchor) * weights;
}

Eigen::MatrixXd ParticleEnsemble::covariance() const {
  const Eigen::MatrixXd centered = particles.colwise() - mean();
  return centered * weights.asDiagonal() * centered.transpose();
}

ParticleEnsemble make_ensemble(Eigen::MatrixXd particles) {
  if (particles.cols() == 0) throw PreconditionError("ensemble needs at least one particle");
  ParticleEnsemble e;
  e.weights = Eigen::VectorXd::Constant(particles.cols(), 1.0 / static_cast<double>(particles.cols()));
  e.particles = std::move(particles);
  return e;
}

void validate(const ParticleEnsemble& ensemble) {
  if (ensemble.particles.cols() == 0) throw PreconditionError("ensemble is empty");
  if (ensemble.weights.size() != ensemble.particles.cols())
    throw ShapeError("ensemble has " + std::to_string(ensemble.particles.cols()) + " particles but " +
                     std::to_string(ensemble.weights.size()) + " weights");
  if ((ensemble.weights.array() < 0.0).any() || !ensemble.weights.allFinite())
    throw PreconditionError("ensemble weights must be finite and non-negative");
  if (std::abs(ensemble.weights.sum() - 1.0) >= 1e-10) throw PreconditionError("ensemble weights must sum to 1");
}

ParticleEnsemble sample_prior(const Eigen::VectorXd& mean, const Covariance& cov, int count, std::uint64_t seed) {
  if (count < 1) throw PreconditionError("sample_prior: count must be >= 1");
  if (cov.dim() != mean.size()) throw ShapeError("sample_prior: covariance dimension mismatch");
  Eigen::MatrixXd particles(mean.size(), count);
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
    CounterRng rng(derive_key(seed, i));
    particles.col(static_cast<Eigen::Index>(i)) = mean + cov.sample(rng);
  });
  return make_ensemble(std::move(particles));
}

ParticleEnsemble predict(const ParticleEnsemble& ensemble, const DynamicsModel& model, const Covariance& process_noise,
                         std::uint64_t seed, const std::optional<Box>& box, PredictStats* stats) {
  validate(ensemble);
  const int d = ensemble.dim();
  if (model.dim() != d) throw ShapeError("predict: model dimension mismatch");
  if (process_noise.dim() != d) throw ShapeError("predict: process noise dimension mismatch");
  if (box && (box->lower.size() != d || box->upper.size() != d)) throw ShapeError("predict: box dimension mismatch");

  ParticleEnsemble out = ensemble;
  std::vector<char> diverged(static_cast<std::size_t>(ensemble.size()), 0);
  parallel_for(static_cast<std::size_t>(ensemble.size()), [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    CounterRng rng(derive_key(seed, i));
    Eigen::VectorXd x = ensemble.particles.col(col);
    try {
      x = propagate(model, x);
    } catch (const DivergenceError&) {
      diverged[i] = 1;
      if (box) x = x.cwiseMax(box->lower).cwiseMin(box->upper);
    }
    x += process_noise.sample(rng);
    if (!x.allFinite()) {
      diverged[i] = 1;
      x = ensemble.particles.col(col);
      if (box) x = x.cwiseMax(box->lower).cwiseMin(box->upper);
    }
    out.particles.col(col) = x;
  });
  if (stats) stats->divergent = static_cast<int>(std::count(diverged.begin(), diverged.end(), 1));
  return out;
}

ParticleEnsemble update_weights(const ParticleEnsemble& ensemble, const Eigen::VectorXd& y,
                                const ObservationOperator& op, const Covariance& obs_cov, UpdateStats* stats) {
  validate(ensemble);
  if (op.state_dim() != ensemble.dim()) throw ShapeError("update_weights: operator state dimension mismatch");
  if (op.obs_dim() != y.size() || obs_cov.dim() != y.size())
    throw ShapeError("update_weights: observation dimension mismatch");

  const Eigen::Index n = ensemble.particles.cols();
  Eigen::VectorXd logw(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    const double w = ensemble.weights[col];
    const Eigen::VectorXd innovation = y - op.apply(ensemble.particles.col(col));
    double loglik;
    if (obs_cov.is_zero())
      loglik = innovation.isZero(0.0) ? 0.0 : kNegInf;
    else
      loglik = -0.5 * obs_cov.mahalanobis_squared(innovation);
    logw[col] = w > 0.0 ? std::log(w) + loglik : kNegInf;
  });

  ParticleEnsemble out = ensemble;
  const double top = logw.maxCoeff();
  if (!(top > kNegInf)) {
    out.weights.setConstant(1.0 / static_cast<double>(n));
    if (stats) stats->degenerate = true;
    return out;
  }
  out.weights = (logw.array() - top).unaryExpr([](double v) { return std::exp(v); });
  out.weights /= out.weights.sum();
  if (stats) stats->degenerate = false;
  return out;
}

double ess(const Eigen::VectorXd& weights) { return 1.0 / weights.squaredNorm(); }

double ess(const ParticleEnsemble& ensemble) { return ess(ensemble.weights); }

std::vector<int> systematic_indices(const Eigen::VectorXd& weights, int count, std::uint64_t seed) {
  if (count < 1) throw PreconditionError("systematic_indices: count must be >= 1");
  CounterRng rng(seed);
  const double offset = rng.uniform();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  double cumulative = weights[0];
  Eigen::Index j = 0;
  const Eigen::Index last = weights.size() - 1;
  for (int i = 0; i < count; ++i) {
    const double pointer = (static_cast<double>(i) + offset) / static_cast<double>(count);
    while (pointer >= cumulative && j < last) cumulative += weights[++j];
    out.push_back(static_cast<int>(j));
  }
  return out;
}

ParticleEnsemble resample_systematic(const ParticleEnsemble& ensemble, std::uint64_t seed) {
  validate(ensemble);
  return gather(ensemble, systematic_indices(ensemble.weights, ensemble.size(), seed));
}

StateVector weighted_superposition(const Eigen::VectorXd& weights) {
  if (weights.size() == 0) throw PreconditionError("weighted_superposition: no weights");
  if (weights.size() > (Eigen::Index{1} << kMaxQubits))
    throw CapacityError("weighted_superposition: more than 2^24 particles");
  const int n = register_qubits(weights.size());
  Eigen::VectorXcd amps = Eigen::VectorXcd::Zero(Eigen::Index{1} << n);
  amps.head(weights.size()) = weights.cwiseSqrt().cast<Complex>();
  StateVector state{n, std::move(amps)};
  const Eigen::VectorXd probs = probabilities(state);
  const double error = (probs.head(weights.size()) - weights).cwiseAbs().maxCoeff();
  if (error > 1e-12) throw PreconditionError("weighted_superposition: probabilities differ from weights");
  return state;
}

std::vector<int> quantum_indices(const Eigen::VectorXd& weights, std::uint64_t shots, std::uint64_t seed) {
  const StateVector state = weighted_superposition(weights);
  const auto record = measure(state, shots, seed);
  std::vector<int> out;
  out.reserve(shots);
  for (const auto& [index, count] : record.counts) {
    // Padding indices carry zero probability and cannot be drawn.
    const int ancestor = static_cast<int>(std::min<BasisIndex>(index, static_cast<BasisIndex>(weights.size() - 1)));
    out.insert(out.end(), count, ancestor);
  }
  return out;
}

ParticleEnsemble resample_quantum(const ParticleEnsemble& ensemble, std::uint64_t shots, std::uint64_t seed) {
  validate(ensemble);
  if (shots == 0) shots = static_cast<std::uint64_t>(ensemble.size());
  return gather(ensemble, quantum_indices(ensemble.weights, shots, seed));
}

StateVector qvr_state(const QvrAnsatz& ansatz) {
  if (ansatz.layers < 1) throw PreconditionError("qvr ansatz needs at least one layer");
  if (ansatz.thetas.size() != static_cast<Eigen::Index>(ansatz.layers) * ansatz.num_qubits)
    throw ShapeError("qvr ansatz needs layers * num_qubits angles");
  StateVector state = basis_state(ansatz.num_qubits, 0);
  const int n = ansatz.num_qubits;
  for (int l = 0; l < ansatz.layers; ++l) {
    for (int q = 0; q < n; ++q)
      kernels::single_qubit(state.amplitudes, q,
                            kernels::rotation(Axis::Y, ansatz.thetas[static_cast<Eigen::Index>(l) * n + q]));
    if (l + 1 == ansatz.layers || n < 2) continue;
    const int pairs = n == 2 ? 1 : n;
    for (int q = 0; q < pairs; ++q) kernels::cz(state.amplitudes, q, (q + 1) % n);
  }
  return state;
}

Eigen::VectorXd qvr_probabilities(const QvrAnsatz& ansatz) { return probabilities(qvr_state(ansatz)); }

double qvr_divergence(const Eigen::VectorXd& model, const Eigen::VectorXd& target, bool reverse) {
  if (model.size() != target.size()) throw ShapeError("qvr_divergence: size mismatch");
  const Eigen::VectorXd t = floored_target(target);
  double d = 0.0;
  if (!reverse) {
    for (Eigen::Index k = 0; k < model.size(); ++k)
      if (model[k] > 0.0) d += model[k] * std::log(model[k] / t[k]);
  } else {
    for (Eigen::Index k = 0; k < model.size(); ++k)
      if (target[k] > 0.0) d += t[k] * std::log(t[k] / std::max(model[k], kKlFloor));
  }
  return std::max(d, 0.0);
}

Eigen::VectorXd qvr_gradient(const QvrAnsatz& ansatz, const Eigen::VectorXd& target, bool reverse) {
  const Eigen::VectorXd p = qvr_probabilities(ansatz);
  const Eigen::VectorXd t = floored_target(target);
  // d D / d p_k, dropping constants that vanish against sum_k dp_k = 0.
  Eigen::VectorXd weight(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!reverse)
      weight[k] = p[k] > 0.0 ? std::log(p[k] / t[k]) : 0.0;
    else
      weight[k] = target[k] > 0.0 ? -t[k] / std::max(p[k], kKlFloor) : 0.0;
  }
  const Eigen::Index count = ansatz.thetas.size();
  Eigen::VectorXd grad(count);
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t j) {
    QvrAnsatz shifted = ansatz;
    const auto idx = static_cast<Eigen::Index>(j);
    shifted.thetas[idx] = ansatz.thetas[idx] + kHalfPi;
    const Eigen::VectorXd plus = qvr_probabilities(shifted);
    shifted.thetas[idx] = ansatz.thetas[idx] - kHalfPi;
    const Eigen::VectorXd minus = qvr_probabilities(shifted);
    grad[idx] = 0.5 * weight.dot(plus - minus);
  });
  return grad;
}

QvrFit qvr_fit(const Eigen::VectorXd& target_weights, const QvrConfig& config, std::uint64_t seed) {
  const auto size = static_cast<std::size_t>(target_weights.size());
  if (size < 2 || (size & (size - 1)) != 0) throw ShapeError("qvr_fit: target length must be a power of two >= 2");
  if ((target_weights.array() < 0.0).any() || std::abs(target_weights.sum() - 1.0) >= 1e-10)
    throw PreconditionError("qvr_fit: target weights must be a normalized distribution");
  if (config.layers < 1) throw PreconditionError("qvr_fit: layers must be >= 1");

  QvrAnsatz ansatz;
  ansatz.num_qubits = std::countr_zero(size);
  check_qubit_count(ansatz.num_qubits);
  ansatz.layers = config.layers;
  ansatz.thetas.resize(static_cast<Eigen::Index>(config.layers) * ansatz.num_qubits);
  CounterRng rng(seed);
  for (Eigen::Index j = 0; j < ansatz.thetas.size(); ++j) ansatz.thetas[j] = 0.1 * rng.uniform();

  auto with = [&](const Eigen::VectorXd& theta) {
    QvrAnsatz a = ansatz;
    a.thetas = theta;
    return a;
  };
  const Objective f = [&](const Eigen::VectorXd& theta) {
    return qvr_divergence(qvr_probabilities(with(theta)), target_weights, config.reverse_kl);
  };
  const GradientFn g = [&](const Eigen::VectorXd& theta) {
    return qvr_gradient(with(theta), target_weights, config.reverse_kl);
  };
  DescentOptions options;
  options.max_iterations = config.max_iterations;
  options.gradient_tolerance = 1e-9;
  const DescentResult r = descend(f, g, ansatz.thetas, options);

  QvrFit fit;
  fit.ansatz = with(r.x);
  fit.divergence = r.value;
  fit.trace = r.trace;
  fit.reached_threshold = fit.divergence < config.threshold;
  return fit;
}

namespace {

// Draws `count` ancestors from the fitted distribution, discarding padding outcomes.
std::vector<int> qvr_indices(const QvrFit& fit, int count, Eigen::Index particles, std::uint64_t seed,
                             const Eigen::VectorXd& weights) {
  const StateVector state = qvr_state(fit.ansatz);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t batch = 0; batch < 64 && static_cast<int>(out.size()) < count; ++batch) {
    const auto record = measure(state, static_cast<std::uint64_t>(count), derive_key(seed, batch));
    for (BasisIndex k : record.expand()) {
      if (static_cast<Eigen::Index>(k) >= particles) continue;
      out.push_back(static_cast<int>(k));
      if (static_cast<int>(out.size()) == count) break;
    }
  }
  if (static_cast<int>(out.size()) < count) {
    const auto rest = systematic_indices(weights, count - static_cast<int>(out.size()), derive_key(seed, 1u << 20));
    out.insert(out.end(), rest.begin(), rest.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

PfResult run_pf(const AssimilationProblem& problem, const PfConfig& config) {
  problem.validate();
  if (config.particles < 2) throw PreconditionError("run_pf: at least 2 particles are required");
  if (!(config.threshold >= 0.0 && config.threshold <= 1.0))
    throw PreconditionError("run_pf: threshold must lie in [0, 1]");
  const int d = problem.dim();
  const Covariance process = problem.process_cov.dim() == d ? problem.process_cov : Covariance::zero(d);
  const std::uint64_t predict_root = derive_key(config.seed, 1);
  const std::uint64_t resample_root = derive_key(config.seed, 2);

  PfResult result;
  ParticleEnsemble ensemble =
      sample_prior(problem.background, problem.background_cov, config.particles, derive_key(config.seed, 0));
  for (int k = 0; k < problem.window; ++k) {
    if (k > 0) {
      PredictStats ps;
      ensemble = predict(ensemble, problem.model, process, derive_key(predict_root, static_cast<std::uint64_t>(k)),
                         config.box, &ps);
      result.divergent_particles += ps.divergent;
    }
    for (const auto& obs : problem.observations) {
      if (obs.time != k) continue;
      UpdateStats us;
      ensemble = update_weights(ensemble, obs.value, obs.op, obs.cov, &us);
      result.degenerate_updates += us.degenerate ? 1 : 0;
    }
    result.analysis.push_back(ensemble.mean());
    const double e = ess(ensemble);
    result.ess.push_back(e);
    const bool resample = e < config.threshold * config.particles;
    result.resampled.push_back(resample ? 1 : 0);
    if (!resample) continue;
    ++result.resample_count;
    const std::uint64_t rs = derive_key(resample_root, static_cast<std::uint64_t>(k));
    switch (config.resampler) {
      case Resampler::systematic:
        ensemble = resample_systematic(ensemble, rs);
        break;
      case Resampler::quantum:
        ensemble = resample_quantum(ensemble, 0, rs);
        break;
      case Resampler::qvr: {
        const int n = register_qubits(ensemble.size());
        Eigen::VectorXd padded = Eigen::VectorXd::Zero(Eigen::Index{1} << n);
        padded.head(ensemble.size()) = ensemble.weights;
        padded /= padded.sum();
        const QvrFit fit = qvr_fit(padded, config.qvr, derive_key(rs, 0));
        result.qvr_divergences.push_back(fit.divergence);
        ensemble = gather(ensemble, qvr_indices(fit, ensemble.size(), ensemble.size(), derive_key(rs, 1),
                                                ensemble.weights));
        break;
      }
    }
  }
  result.final_ensemble = std::move(ensemble);
  return result;
}

void write_trace_csv(std::ostream& out, const PfResult& result, const std::vector<Eigen::VectorXd>& truth) {
  out << "time,ess,resampled,rmse\n";
  for (std::size_t k = 0; k < result.analysis.size(); ++k) {
    out << k << ',' << result.ess[k] << ',' << static_cast<int>(result.resampled[k]) << ',';
    if (k < truth.size()) out << rmse(result.analysis[k], truth[k]);
    out << '\n';
  }
}

}  // namespace qda::pf
