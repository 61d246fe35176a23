#include "qda/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "qda/errors.hpp"
#include "qda/fourdvar.hpp"
#include "qda/kalman.hpp"
#include "qda/parallel.hpp"
#include "qda/rng.hpp"

namespace qda {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// 1/2 r^T C^-1 r. A zero covariance gives 0 on an exact match and +inf
// otherwise, unless `surrogate` > 0 stands in as an isotropic variance.
double quadratic(const Eigen::VectorXd& r, const Covariance& cov, double surrogate) {
  if (!cov.is_zero()) return 0.5 * cov.mahalanobis_squared(r);
  if (surrogate > 0.0) return 0.5 * r.squaredNorm() / surrogate;
  return r.isZero(0.0) ? 0.0 : kInf;
}

struct CycleObservation {
  int offset = 0;  // model steps after the cycle start
  const Observation* obs = nullptr;
};

// Negative log posterior of the state at a cycle start: Gaussian prior plus
// the observations inside the cycle, reached by deterministic propagation.
class CycleCost {
 public:
  CycleCost(const DynamicsModel& model, Eigen::VectorXd prior_mean, Covariance prior_cov,
            std::vector<CycleObservation> observations, double surrogate)
      : model_(model),
        mean_(std::move(prior_mean)),
        prior_(std::move(prior_cov)),
        obs_(std::move(observations)),
        surrogate_(surrogate) {}

  // +inf outside the support of a zero covariance or when the model diverges.
  double exact(const Eigen::VectorXd& x) const { return evaluate(x, 0.0); }
  // Zero covariances replaced by the surrogate variance, for tabulation.
  double smoothed(const Eigen::VectorXd& x) const { return evaluate(x, surrogate_); }

  std::size_t observation_count() const { return obs_.size(); }

 private:
  double evaluate(const Eigen::VectorXd& x, double surrogate) const {
    double j = quadratic(x - mean_, prior_, surrogate);
    Eigen::VectorXd state = x;
    int at = 0;
    try {
      for (const auto& o : obs_) {
        for (; at < o.offset; ++at) state = propagate(model_, state);
        j += quadratic(o.obs->value - o.obs->op.apply(state), o.obs->cov, surrogate);
      }
    } catch (const DivergenceError&) {
      return kInf;
    }
    return std::isfinite(j) ? j : kInf;
  }

  const DynamicsModel& model_;
  Eigen::VectorXd mean_;
  Covariance prior_;
  std::vector<CycleObservation> obs_;
  double surrogate_;
};

// Non-finite entries are replaced by one more than the largest finite value.
DiagonalObservable tabulate(const EncodingScheme& scheme, const CycleCost& cost) {
  Eigen::VectorXd values(static_cast<Eigen::Index>(scheme.size()));
  parallel_for(scheme.size(), [&](std::size_t k) {
    values[static_cast<Eigen::Index>(k)] = cost.smoothed(decode(static_cast<BasisIndex>(k), scheme));
  });
  double top = -kInf;
  for (double v : values) top = std::isfinite(v) ? std::max(top, v) : top;
  const double fill = std::isfinite(top) ? top + 1.0 : 0.0;
  for (double& v : values) v = std::isfinite(v) ? v : fill;
  return make_observable(std::move(values));
}

double mean_cell_variance(const EncodingScheme& scheme) {
  return scheme.cell_width().squaredNorm() / static_cast<double>(scheme.dims);
}

// Gaussian summary of an ensemble; the zero flag when it has collapsed.
Covariance ensemble_prior(const pf::ParticleEnsemble& ensemble) {
  const int d = ensemble.dim();
  Eigen::MatrixXd c = ensemble.covariance();
  const double scale = c.diagonal().maxCoeff();
  if (!(scale > 1e-300)) return Covariance::zero(d);
  c = 0.5 * (c + c.transpose()) + 1e-10 * scale * Eigen::MatrixXd::Identity(d, d);
  try {
    return Covariance::from_matrix(c);
  } catch (const PreconditionError&) {
    return Covariance::diagonal(c.diagonal().cwiseMax(1e-10 * scale));
  }
}

// The configured box, shrunk to box_sigmas prior standard deviations around the mean.
EncodingScheme cycle_scheme(const EncodingScheme& base, const Eigen::VectorXd& mean, const Covariance& prior,
                            const QvpfSettings& s) {
  if (!s.adaptive_box) return base;
  const Eigen::VectorXd cell = base.cell_width();
  Eigen::VectorXd lo(base.dims), hi(base.dims);
  for (int i = 0; i < base.dims; ++i) {
    const double sd = prior.is_zero() ? 0.0 : std::sqrt(prior.matrix()(i, i));
    const double half = std::max(s.box_sigmas * sd, 0.5 * cell[i]);
    lo[i] = std::max(base.lower[i], mean[i] - half);
    hi[i] = std::min(base.upper[i], mean[i] + half);
    if (!(hi[i] > lo[i])) {
      lo[i] = base.lower[i];
      hi[i] = base.upper[i];
    }
  }
  return make_scheme(base.bits_per_dim, lo, hi);
}

std::vector<CycleObservation> observations_between(const AssimilationProblem& problem, int begin, int end) {
  std::vector<CycleObservation> out;
  for (const auto& o : problem.observations)
    if (o.time >= begin && o.time < end) out.push_back({o.time - begin, &o});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.offset < b.offset; });
  return out;
}

CycleCost window_cost(const AssimilationProblem& problem, const EncodingScheme& scheme) {
  return CycleCost(problem.model, problem.background, problem.background_cov,
                   observations_between(problem, 0, problem.window), mean_cell_variance(scheme));
}

Eigen::Index argmin(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  v.minCoeff(&best);
  return best;
}

AssimilationReport base_report(const PipelineConfig& config, const TwinExperiment& twin) {
  AssimilationReport r;
  r.method = method_name(config.method);
  r.seed = config.seed;
  r.config = config.source.is_null() ? config_to_json(config) : config.source;
  r.truth = twin.truth;
  r.background_run = free_run(twin.problem.model, twin.problem.background, twin.problem.window);
  const bool stochastic = config.method == Method::pf || config.method == Method::qvpf;
  r.notes["model_error"] = stochastic ? "stochastic: process_cov is added at every prediction step"
                                      : "strong-constraint: process_cov is ignored";
  if (config.encoding) {
    const Eigen::VectorXd& x0 = twin.truth.front();
    const Eigen::VectorXd snapped = decode(encode(x0, *config.encoding), *config.encoding);
    r.notes["discretization"] = {{"cell_width", vector_json(config.encoding->cell_width())},
                                 {"max_abs_error", vector_json(0.5 * config.encoding->cell_width())},
                                 {"initial_truth_rmse", rmse(snapped, x0)}};
  }
  return r;
}

// Errors and plot data for whatever part of the analysis exists.
void finish(AssimilationReport& r) {
  r.rmse.clear();
  r.background_rmse.clear();
  Table errors{"rmse", {"time", "analysis_rmse", "background_rmse"}, {}};
  Table path{"trajectory", {"time"}, {}};
  const int d = r.truth.empty() ? 0 : static_cast<int>(r.truth[0].size());
  for (const char* series : {"truth", "analysis", "background"})
    for (int i = 0; i < d; ++i) path.columns.push_back(std::string(series) + "_" + std::to_string(i));
  for (std::size_t k = 0; k < r.analysis.size() && k < r.truth.size(); ++k) {
    if (r.analysis[k].size() == 0) break;
    r.rmse.push_back(rmse(r.analysis[k], r.truth[k]));
    r.background_rmse.push_back(rmse(r.background_run[k], r.truth[k]));
    errors.rows.push_back({static_cast<double>(k), r.rmse.back(), r.background_rmse.back()});
    std::vector<double> row{static_cast<double>(k)};
    for (const auto* s : {&r.truth, &r.analysis, &r.background_run})
      for (int i = 0; i < d; ++i) row.push_back((*s)[k][i]);
    path.rows.push_back(std::move(row));
  }
  r.plots = {std::move(errors), std::move(path)};
}

AssimilationReport run_fourdvar(const PipelineConfig& config, const TwinExperiment& twin) {
  const AssimilationProblem& problem = twin.problem;
  AssimilationReport r = base_report(config, twin);
  DescentOptions options = fourdvar::default_minimize_options();
  options.max_iterations = config.fourdvar.max_iterations;
  options.gradient_tolerance = config.fourdvar.gradient_tolerance;
  const auto result = fourdvar::minimize(problem, problem.background, options);
  r.analysis = fourdvar::trajectory(problem, result.x);
  r.diagnostics = {{"iterations", result.iterations},
                   {"converged", result.converged},
                   {"diverged", result.diverged},
                   {"final_cost", result.cost_trace.empty() ? kNaN : result.cost_trace.back()},
                   {"initial_state", vector_json(result.x)}};
  Table trace{"fourdvar", {"iteration", "cost"}, {}};
  for (std::size_t i = 0; i < result.cost_trace.size(); ++i)
    trace.rows.push_back({static_cast<double>(i), result.cost_trace[i]});
  r.traces.push_back(std::move(trace));
  return r;
}

AssimilationReport run_particle_filter(const PipelineConfig& config, const TwinExperiment& twin) {
  AssimilationReport r = base_report(config, twin);
  pf::PfConfig pc;
  pc.particles = config.pf.particles;
  pc.resampler = config.pf.resampler;
  pc.threshold = config.pf.threshold;
  pc.qvr = config.pf.qvr;
  pc.seed = method_seed(config.seed);
  if (config.encoding) pc.box = pf::Box{config.encoding->lower, config.encoding->upper};
  const pf::PfResult result = pf::run_pf(twin.problem, pc);
  r.analysis = result.analysis;
  Json qvr = Json::array();
  for (double v : result.qvr_divergences) qvr.push_back(v);
  r.diagnostics = {{"particles", pc.particles},
                   {"mean_ess", mean_of(result.ess)},
                   {"resample_count", result.resample_count},
                   {"degenerate_updates", result.degenerate_updates},
                   {"divergent_particles", result.divergent_particles},
                   {"qvr_divergences", qvr}};
  Table trace{"pf", {"time", "ess", "resampled"}, {}};
  for (std::size_t k = 0; k < result.ess.size(); ++k)
    trace.rows.push_back({static_cast<double>(k), result.ess[k], static_cast<double>(result.resampled[k])});
  r.traces.push_back(std::move(trace));
  return r;
}

AssimilationReport run_qaoa(const PipelineConfig& config, const TwinExperiment& twin) {
  const AssimilationProblem& problem = twin.problem;
  const EncodingScheme& scheme = *config.encoding;
  AssimilationReport r = base_report(config, twin);
  const DiagonalObservable table = tabulate(scheme, window_cost(problem, scheme));
  qaoa::QaoaConfig qc = config.qaoa.optimizer;
  qc.seed = method_seed(config.seed);
  const qaoa::QaoaResult result = qaoa::optimize(table, config.qaoa.depth, qc);
  BasisIndex best = result.samples.counts.begin()->first;
  for (const auto& [k, count] : result.samples.counts)
    if (table.values[static_cast<Eigen::Index>(k)] < table.values[static_cast<Eigen::Index>(best)]) best = k;
  r.analysis = fourdvar::trajectory(problem, decode(best, scheme));
  const Eigen::Index minimizer = argmin(table.values);
  const Eigen::VectorXd p = probabilities(qaoa::evolve(table, result.params));
  r.diagnostics = {{"depth", result.params.depth},
                   {"gammas", vector_json(result.params.gammas)},
                   {"betas", vector_json(result.params.betas)},
                   {"expectation", result.expectation},
                   {"table_minimum", table.values[minimizer]},
                   {"minimizer", minimizer},
                   {"minimizer_probability", p[minimizer]},
                   {"best_sample", best},
                   {"best_sample_cost", table.values[static_cast<Eigen::Index>(best)]},
                   {"gradient_evaluations", result.gradient_evaluations},
                   {"natural_fallback", result.natural_fallback}};
  Table trace{"qaoa", {"iteration", "expectation"}, {}};
  for (const auto& [it, v] : result.trace) trace.rows.push_back({static_cast<double>(it), v});
  r.traces.push_back(std::move(trace));
  return r;
}

AssimilationReport run_qmcmc(const PipelineConfig& config, const TwinExperiment& twin) {
  const AssimilationProblem& problem = twin.problem;
  const EncodingScheme& scheme = *config.encoding;
  AssimilationReport r = base_report(config, twin);
  const DiagonalObservable table = tabulate(scheme, window_cost(problem, scheme));
  const mcmc::TargetDistribution target = mcmc::target_from_cost(table);
  mcmc::QuantumStepOptions options;
  options.epsilon_shots = config.qmcmc.epsilon_shots;
  const auto& s = config.qmcmc;
  const mcmc::ChainRun run = mcmc::run_chain(target, s.kernel, s.steps, s.burn_in, method_seed(config.seed), s.kind,
                                             encode(problem.background, scheme), options);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(problem.dim());
  for (const BasisIndex k : run.states) x0 += decode(k, scheme);
  x0 /= static_cast<double>(run.states.size());
  r.analysis = fourdvar::trajectory(problem, x0);
  const mcmc::ChainDiagnostics diag = mcmc::diagnostics(run, table.values);
  r.diagnostics = {{"steps", s.steps},
                   {"burn_in", s.burn_in},
                   {"acceptance_rate", diag.acceptance_rate},
                   {"oracle_calls", run.oracle_calls},
                   {"ess", diag.ess},
                   {"autocorrelation_time", diag.autocorrelation_time},
                   {"posterior_mean", vector_json(x0)}};
  Table trace{"qmcmc", {"step", "state", "accepted", "oracle_calls"}, {}};
  for (std::size_t i = 0; i < run.states.size(); ++i)
    trace.rows.push_back({static_cast<double>(i), static_cast<double>(run.states[i]),
                          static_cast<double>(run.step_accepted[i]), static_cast<double>(run.step_oracle_calls[i])});
  r.traces.push_back(std::move(trace));
  return r;
}

}  // namespace

std::uint64_t twin_seed(std::uint64_t seed) { return derive_key(seed, 0); }
std::uint64_t method_seed(std::uint64_t seed) { return derive_key(seed, 1); }

TwinExperiment make_twin(const ExperimentConfig& experiment, std::uint64_t seed) {
  return generate_twin(experiment.twin(), twin_seed(seed));
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

AssimilationReport run_qvpf(const PipelineConfig& config, const TwinExperiment& twin) {
  if (!config.encoding) throw PreconditionError("qvpf needs an encoding scheme");
  const AssimilationProblem& problem = twin.problem;
  const QvpfSettings& s = config.qvpf;
  const int n_particles = s.particles;
  const int window = problem.window;
  const std::uint64_t root = method_seed(config.seed);
  const mcmc::StepKind step_kind = config.qmcmc.kind;
  mcmc::QuantumStepOptions step_options;
  step_options.mode = step_kind == mcmc::StepKind::quantum ? mcmc::QuantumMode::uncorrected : mcmc::QuantumMode::corrected;
  step_options.epsilon_shots = config.qmcmc.epsilon_shots;

  AssimilationReport report = base_report(config, twin);
  report.analysis.assign(static_cast<std::size_t>(window), Eigen::VectorXd());
  Table cycles{"qvpf",
               {"cycle", "time", "ess", "degenerate", "qaoa_expectation", "minimizer_probability", "acceptance_rate",
                "oracle_calls"},
               {}};
  Table qaoa_trace{"qaoa", {"cycle", "iteration", "expectation"}, {}};
  std::vector<double> cycle_ess;
  std::uint64_t accepted = 0, moves = 0, oracle_calls = 0;
  int degenerate = 0, divergent = 0;

  int step = 1;
  int time = 0;
  const auto log = [&](int at_step, const char* stage, Json detail) {
    step = at_step;
    report.stages.push_back({time, at_step, stage, std::move(detail)});
  };

  try {
    pf::ParticleEnsemble ensemble =
        pf::sample_prior(problem.background, problem.background_cov, n_particles, derive_key(root, 0));
    log(1, "prior", {{"particles", n_particles}, {"mean", vector_json(ensemble.mean())}});
    const char* kinds[] = {"classical", "quantum", "quantum_corrected"};
    log(2, "parameters",
        {{"qaoa_depth", config.qaoa.depth},
         {"qaoa_max_iterations", config.qaoa.optimizer.max_iterations},
         {"qmcmc_step", kinds[static_cast<int>(step_kind)]},
         {"refine_steps", s.refine_steps},
         {"cycle_length", s.cycle_length}});
    const pf::Box clamp{config.encoding->lower, config.encoding->upper};

    int cycle = 0;
    for (time = 0; time < window; time += s.cycle_length, ++cycle) {
      const int end = std::min(time + s.cycle_length, window);
      const std::uint64_t cs = derive_key(derive_key(root, 1), static_cast<std::uint64_t>(cycle));

      ++step;
      const Eigen::VectorXd prior_mean = ensemble.mean();
      const Covariance prior = ensemble_prior(ensemble);
      const EncodingScheme scheme = cycle_scheme(*config.encoding, prior_mean, prior, s);
      const CycleCost cost(problem.model, prior_mean, prior, observations_between(problem, time, end),
                           mean_cell_variance(scheme));
      const DiagonalObservable table = tabulate(scheme, cost);
      const Eigen::Index minimizer = argmin(table.values);
      log(3, "tabulate_cost",
          {{"cycle", cycle},
           {"qubits", scheme.total_qubits()},
           {"lower", vector_json(scheme.lower)},
           {"upper", vector_json(scheme.upper)},
           {"observations", cost.observation_count()},
           {"min_cost", table.values.minCoeff()},
           {"max_cost", table.values.maxCoeff()}});

      step = 4;
      qaoa::QaoaConfig qc = config.qaoa.optimizer;
      qc.seed = derive_key(cs, 1);
      qc.shots = static_cast<std::uint64_t>(n_particles);
      log(4, "qaoa_initial_state", {{"qubits", scheme.total_qubits()}});
      const qaoa::QaoaResult qr = qaoa::optimize(table, config.qaoa.depth, qc);
      log(5, "qaoa_layers", {{"gammas", vector_json(qr.params.gammas)}, {"betas", vector_json(qr.params.betas)}});
      for (const auto& [it, v] : qr.trace)
        qaoa_trace.rows.push_back({static_cast<double>(cycle), static_cast<double>(it), v});
      const StateVector psi = qaoa::evolve(table, qr.params);
      const Eigen::VectorXd q = probabilities(psi);
      const std::vector<BasisIndex> cells = measure(psi, static_cast<std::uint64_t>(n_particles), derive_key(cs, 2)).expand();
      log(6, "qaoa_measure",
          {{"expectation", qr.expectation},
           {"iterations", qr.trace.empty() ? 0 : static_cast<int>(qr.trace.size()) - 1},
           {"minimizer_probability", q[minimizer]}});

      // Proposals spread uniformly inside their measured cells, importance
      // weighted by posterior over proposal density.
      step = 7;
      const int d = problem.dim();
      const Eigen::VectorXd width = scheme.cell_width();
      Eigen::MatrixXd proposals(d, n_particles);
      Eigen::VectorXd logw(n_particles);
      const std::uint64_t jitter_root = derive_key(cs, 3);
      parallel_for(static_cast<std::size_t>(n_particles), [&](std::size_t i) {
        const auto col = static_cast<Eigen::Index>(i);
        CounterRng rng(derive_key(jitter_root, i));
        Eigen::VectorXd x = decode(cells[i], scheme);
        for (int j = 0; j < d; ++j) x[j] += (rng.uniform() - 0.5) * width[j];
        proposals.col(col) = x;
        const double j = cost.exact(x);
        logw[col] = std::isfinite(j) ? -j - std::log(q[static_cast<Eigen::Index>(cells[i])])
                                     : -kInf;
      });
      const double top = logw.maxCoeff();
      const bool collapsed = !std::isfinite(top);
      double cycle_acceptance = kNaN;
      std::uint64_t cycle_calls = 0;
      double e = static_cast<double>(n_particles);
      if (collapsed) {
        ++degenerate;
        log(7, "weighted_superposition", {{"degenerate", true}});
      } else {
        pf::ParticleEnsemble weighted = pf::make_ensemble(proposals);
        weighted.weights = (logw.array() - top).unaryExpr([](double v) { return std::exp(v); });
        weighted.weights /= weighted.weights.sum();
        e = pf::ess(weighted);
        log(7, "weighted_superposition", {{"degenerate", false}, {"ess", e}});

        ensemble = pf::resample_quantum(weighted, 0, derive_key(cs, 4));
        log(9, "measure_resample", {{"shots", n_particles}});

        const mcmc::TargetDistribution target = mcmc::target_from_cost(table);
        std::vector<int> acc(static_cast<std::size_t>(n_particles), 0), calls(static_cast<std::size_t>(n_particles), 0);
        const std::uint64_t refine_root = derive_key(cs, 5);
        parallel_for(static_cast<std::size_t>(n_particles), [&](std::size_t i) {
          const auto col = static_cast<Eigen::Index>(i);
          const Eigen::VectorXd x = ensemble.particles.col(col);
          const BasisIndex start = encode(x, scheme);
          BasisIndex c = start;
          for (int m = 0; m < s.refine_steps; ++m) {
            const std::uint64_t seed = derive_key(refine_root, i * static_cast<std::size_t>(s.refine_steps) + m);
            const mcmc::StepResult r = step_kind == mcmc::StepKind::classical
                                           ? mcmc::mh_step(target, config.qmcmc.kernel, c, seed)
                                           : mcmc::qmcmc_step(target, config.qmcmc.kernel, c, seed, step_options);
            acc[i] += r.accepted ? 1 : 0;
            calls[i] += r.oracle_calls;
            c = r.next;
          }
          if (c != start) ensemble.particles.col(col) = x + decode(c, scheme) - decode(start, scheme);
        });
        std::uint64_t cycle_accepted = 0;
        for (std::size_t i = 0; i < acc.size(); ++i) {
          cycle_accepted += static_cast<std::uint64_t>(acc[i]);
          cycle_calls += static_cast<std::uint64_t>(calls[i]);
        }
        const std::uint64_t cycle_moves = static_cast<std::uint64_t>(n_particles) * s.refine_steps;
        accepted += cycle_accepted;
        moves += cycle_moves;
        oracle_calls += cycle_calls;
        if (cycle_moves > 0) cycle_acceptance = static_cast<double>(cycle_accepted) / cycle_moves;
        log(8, "amplified_metropolis",
            {{"moves", cycle_moves}, {"accepted", cycle_accepted}, {"oracle_calls", cycle_calls}});
      }
      cycle_ess.push_back(e);

      report.analysis[static_cast<std::size_t>(time)] = ensemble.mean();
      log(10, "analysis",
          {{"mean", vector_json(report.analysis[static_cast<std::size_t>(time)])},
           {"rmse", rmse(report.analysis[static_cast<std::size_t>(time)], twin.truth[static_cast<std::size_t>(time)])}});
      cycles.rows.push_back({static_cast<double>(cycle), static_cast<double>(time), e, collapsed ? 1.0 : 0.0,
                             qr.expectation, q[minimizer], cycle_acceptance, static_cast<double>(cycle_calls)});

      step = 11;
      int cycle_divergent = 0;
      for (int k = time + 1; k <= end && k < window; ++k) {
        pf::PredictStats ps;
        ensemble = pf::predict(ensemble, problem.model, problem.process_cov,
                               derive_key(derive_key(root, 2), static_cast<std::uint64_t>(k)), clamp, &ps);
        cycle_divergent += ps.divergent;
        if (k < end) report.analysis[static_cast<std::size_t>(k)] = ensemble.mean();
      }
      divergent += cycle_divergent;
      if (end < window) log(11, "advance", {{"to_time", end}, {"divergent", cycle_divergent}});
    }
  } catch (const std::exception& ex) {
    report.status = "failed at step " + std::to_string(step) + ": " + ex.what();
    finish(report);
    throw StageFailure(report.status, std::move(report));
  }

  report.diagnostics = {{"particles", n_particles},
                        {"cycles", cycle_ess.size()},
                        {"mean_ess", mean_of(cycle_ess)},
                        {"degenerate_cycles", degenerate},
                        {"divergent_particles", divergent},
                        {"refine_moves", moves},
                        {"acceptance_rate", moves > 0 ? static_cast<double>(accepted) / moves : kNaN},
                        {"oracle_calls", oracle_calls}};
  report.traces = {std::move(cycles), std::move(qaoa_trace)};
  return report;
}

AssimilationReport run_method(const PipelineConfig& config, const TwinExperiment& twin) {
  const auto start = Clock::now();
  AssimilationReport r;
  try {
    switch (config.method) {
      case Method::fourdvar: r = run_fourdvar(config, twin); break;
      case Method::pf: r = run_particle_filter(config, twin); break;
      case Method::qaoa: r = run_qaoa(config, twin); break;
      case Method::qmcmc: r = run_qmcmc(config, twin); break;
      case Method::qvpf: r = run_qvpf(config, twin); break;
    }
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    AssimilationReport partial = base_report(config, twin);
    partial.status = std::string("failed: ") + e.what();
    finish(partial);
    throw StageFailure(partial.status, std::move(partial));
  }
  finish(r);
  r.timings.emplace_back("total", seconds_since(start));
  return r;
}

AssimilationReport run_config(const PipelineConfig& config) {
  return run_method(config, make_twin(config.experiment, config.seed));
}

Comparison compare_methods(const std::vector<PipelineConfig>& configs) {
  if (configs.empty()) throw PreconditionError("compare: no configs");
  const Json experiment = config_to_json(configs[0])["experiment"];
  std::vector<std::string> violations;
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].seed != configs[0].seed)
      violations.push_back("runs[" + std::to_string(i) + "]: seed differs from runs[0]");
    if (config_to_json(configs[i])["experiment"] != experiment)
      violations.push_back("runs[" + std::to_string(i) + "]: experiment differs from runs[0]");
  }
  if (!violations.empty()) throw ValidationError(violations);

  const TwinExperiment twin = make_twin(configs[0].experiment, configs[0].seed);
  Comparison out;
  for (const auto& config : configs) {
    ComparisonRow row;
    row.method = method_name(config.method);
    AssimilationReport report;
    try {
      report = run_method(config, twin);
      row.status = report.status;
    } catch (const StageFailure& f) {
      report = f.partial;
      row.status = f.what();
    }
    const auto number = [&](const char* key) {
      const auto it = report.diagnostics.find(key);
      return it != report.diagnostics.end() && it->is_number() ? it->get<double>() : kNaN;
    };
    row.mean_rmse = mean_of(report.rmse);
    row.final_rmse = report.rmse.empty() ? kNaN : report.rmse.back();
    row.final_background_rmse = report.background_rmse.empty() ? kNaN : report.background_rmse.back();
    row.mean_ess = number("mean_ess");
    row.acceptance_rate = number("acceptance_rate");
    const double calls = number("oracle_calls");
    row.oracle_calls = std::isnan(calls) ? 0 : static_cast<std::uint64_t>(calls);
    row.seconds = report.timings.empty() ? 0.0 : report.timings.back().second;
    out.rows.push_back(row);
    out.reports.push_back(std::move(report));
  }
  return out;
}

LogLogFit fit_log_log(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("fit_log_log: x and y lengths differ");
  if (x.size() < 4) throw PreconditionError("fit_log_log: at least 4 grid points are required");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x[static_cast<std::size_t>(i)], yi = y[static_cast<std::size_t>(i)];
    if (!(xi > 0.0) || !(yi > 0.0) || !std::isfinite(xi) || !std::isfinite(yi))
      throw PreconditionError("fit_log_log: grid and measurements must be positive and finite");
    a(i, 0) = std::log(xi);
    a(i, 1) = 1.0;
    b[i] = std::log(yi);
  }
  if (a.col(0).maxCoeff() == a.col(0).minCoeff()) throw PreconditionError("fit_log_log: grid is degenerate");
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  LogLogFit fit;
  fit.slope = coef[0];
  fit.intercept = coef[1];
  fit.x = x;
  fit.y = y;
  const Eigen::VectorXd res = b - a * coef;
  fit.residuals.assign(res.data(), res.data() + res.size());
  return fit;
}

bool ScalingCurve::pass() const { return !has_expected || std::abs(fit.slope - expected_slope) <= tolerance; }

ScalingReport epsilon_scaling(const EpsilonScalingSettings& settings, std::uint64_t seed) {
  const auto start = Clock::now();
  if (settings.grid.size() < 4) throw PreconditionError("epsilon_scaling: at least 4 grid points are required");
  const double size = std::ldexp(1.0, settings.num_qubits);
  ScalingReport report;
  report.kind = "epsilon_scaling";
  report.settings = {{"num_qubits", settings.num_qubits}, {"trials", settings.trials}, {"grid", settings.grid}};
  Table trace{"epsilon_scaling", {"epsilon", "marked", "grover_iterations", "quantum_calls", "classical_calls"}, {}};
  std::vector<double> quantum, classical;
  for (std::size_t i = 0; i < settings.grid.size(); ++i) {
    const double eps = settings.grid[i];
    const double marked = eps * size;
    if (!(eps > 0.0 && eps <= 1.0) || marked != std::floor(marked) || marked < 1.0)
      throw PreconditionError("epsilon_scaling: every epsilon times 2^num_qubits must be a positive integer");
    const auto m = static_cast<BasisIndex>(marked);
    const auto q = mcmc::amplified_acceptance_cost(settings.num_qubits, m, settings.trials, derive_key(seed, 2 * i));
    const auto c = mcmc::rejection_acceptance_cost(settings.num_qubits, m, settings.trials, derive_key(seed, 2 * i + 1));
    quantum.push_back(q.mean_calls_per_success);
    classical.push_back(c.mean_calls_per_success);
    trace.rows.push_back({eps, marked, static_cast<double>(mcmc::grover_iterations(eps)), q.mean_calls_per_success,
                          c.mean_calls_per_success});
  }
  report.curves.push_back({"quantum", fit_log_log(settings.grid, quantum), true, -0.5, 0.15});
  report.curves.push_back({"classical", fit_log_log(settings.grid, classical), true, -1.0, 0.15});
  report.traces.push_back(std::move(trace));
  report.timings.emplace_back("total", seconds_since(start));
  return report;
}

namespace {

double error_against(const std::vector<Eigen::VectorXd>& analysis, const KalmanResult& kf) {
  double s = 0.0;
  for (std::size_t k = 0; k < analysis.size(); ++k)
    s += (analysis[k] - kf.means[k]).squaredNorm() / static_cast<double>(analysis[k].size());
  return std::sqrt(s / static_cast<double>(analysis.size()));
}

}  // namespace

ScalingReport particle_scaling(const ParticleScalingSettings& settings, std::uint64_t seed) {
  const auto start = Clock::now();
  if (settings.grid.size() < 4) throw PreconditionError("particle_scaling: at least 4 grid points are required");
  if (!settings.experiment.model.is_linear())
    throw PreconditionError("particle_scaling: the Kalman reference needs a linear model");
  if (settings.replicates < 1) throw PreconditionError("particle_scaling: replicates must be >= 1");
  for (double n : settings.grid)
    if (!(n >= 2.0) || n != std::floor(n)) throw PreconditionError("particle_scaling: grid entries must be integers >= 2");

  const TwinExperiment twin = make_twin(settings.experiment, seed);
  const KalmanResult kf = kalman_filter(twin.problem);
  const bool with_qvpf = settings.qvpf_replicates > 0 && settings.encoding.has_value();

  ScalingReport report;
  report.kind = "particle_scaling";
  report.settings = {{"grid", settings.grid},
                     {"replicates", settings.replicates},
                     {"qvpf_replicates", with_qvpf ? settings.qvpf_replicates : 0}};
  Table trace{"particle_scaling", {"particles", "systematic_error", "quantum_error", "qvpf_error"}, {}};
  std::vector<double> systematic, quantum, qvpf;
  double pf_seconds = 0.0, qvpf_seconds = 0.0;

  for (std::size_t g = 0; g < settings.grid.size(); ++g) {
    const int n = static_cast<int>(settings.grid[g]);
    const std::uint64_t grid_seed = derive_key(seed, 100 + g);
    const auto t0 = Clock::now();
    double sys2 = 0.0, q2 = 0.0;
    for (int r = 0; r < settings.replicates; ++r) {
      pf::PfConfig pc;
      pc.particles = n;
      pc.seed = derive_key(grid_seed, static_cast<std::uint64_t>(r));
      sys2 += std::pow(error_against(pf::run_pf(twin.problem, pc).analysis, kf), 2);
      pc.resampler = pf::Resampler::quantum;
      q2 += std::pow(error_against(pf::run_pf(twin.problem, pc).analysis, kf), 2);
    }
    pf_seconds += seconds_since(t0);
    systematic.push_back(std::sqrt(sys2 / settings.replicates));
    quantum.push_back(std::sqrt(q2 / settings.replicates));

    double v = kNaN;
    if (with_qvpf) {
      const auto t1 = Clock::now();
      PipelineConfig pc;
      pc.experiment = settings.experiment;
      pc.encoding = settings.encoding;
      pc.method = Method::qvpf;
      pc.qaoa = settings.qaoa;
      pc.qmcmc = settings.qmcmc;
      pc.qvpf = settings.qvpf;
      pc.qvpf.particles = n;
      double s2 = 0.0;
      for (int r = 0; r < settings.qvpf_replicates; ++r) {
        pc.seed = derive_key(derive_key(grid_seed, 1u << 20), static_cast<std::uint64_t>(r));
        s2 += std::pow(error_against(run_qvpf(pc, twin).analysis, kf), 2);
      }
      v = std::sqrt(s2 / settings.qvpf_replicates);
      qvpf.push_back(v);
      qvpf_seconds += seconds_since(t1);
    }
    trace.rows.push_back({settings.grid[g], systematic.back(), quantum.back(), v});
  }
  report.curves.push_back({"pf_systematic", fit_log_log(settings.grid, systematic), true, -0.5, 0.15});
  report.curves.push_back({"pf_quantum_resampling", fit_log_log(settings.grid, quantum), false, 0.0, 0.0});
  if (with_qvpf) report.curves.push_back({"qvpf", fit_log_log(settings.grid, qvpf), false, 0.0, 0.0});
  report.traces.push_back(std::move(trace));
  report.timings = {{"particle_filters", pf_seconds}, {"qvpf", qvpf_seconds}, {"total", seconds_since(start)}};
  return report;
}

}  // namespace qda
