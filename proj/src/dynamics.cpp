#include "qda/dynamics.hpp"

#include <string>

#include "qda/errors.hpp"
#include "qda/problem.hpp"

namespace qda {

DynamicsModel linear_model(Eigen::MatrixXd matrix) {
  if (matrix.rows() != matrix.cols() || matrix.rows() < 1) throw ShapeError("linear model matrix must be square");
  if (!matrix.allFinite()) throw PreconditionError("linear model matrix has non-finite entries");
  DynamicsModel m;
  m.kind = DynamicsModel::Kind::linear;
  m.matrix = std::move(matrix);
  return m;
}

DynamicsModel lorenz63_model(double dt, int substeps, double sigma, double rho, double beta) {
  if (!(dt > 0.0)) throw PreconditionError("lorenz63 dt must be > 0");
  if (substeps < 1) throw PreconditionError("lorenz63 substeps must be >= 1");
  DynamicsModel m;
  m.kind = DynamicsModel::Kind::lorenz63;
  m.dt = dt;
  m.substeps = substeps;
  m.sigma = sigma;
  m.rho = rho;
  m.beta = beta;
  return m;
}

Eigen::Vector3d lorenz63_tendency(const DynamicsModel& model, const Eigen::Vector3d& x) {
  return {model.sigma * (x[1] - x[0]), x[0] * (model.rho - x[2]) - x[1], x[0] * x[1] - model.beta * x[2]};
}

Eigen::Vector3d rk4_step(const DynamicsModel& model, const Eigen::Vector3d& x, double h) {
  const Eigen::Vector3d k1 = lorenz63_tendency(model, x);
  const Eigen::Vector3d k2 = lorenz63_tendency(model, x + 0.5 * h * k1);
  const Eigen::Vector3d k3 = lorenz63_tendency(model, x + 0.5 * h * k2);
  const Eigen::Vector3d k4 = lorenz63_tendency(model, x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd propagate(const DynamicsModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.dim())
    throw ShapeError("propagate: state has length " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.dim()));
  Eigen::VectorXd out;
  if (model.is_linear()) {
    out = model.matrix * x;
  } else {
    Eigen::Vector3d s = x;
    for (int i = 0; i < model.substeps; ++i) s = rk4_step(model, s, model.dt);
    out = s;
  }
  if (!out.allFinite()) throw DivergenceError("model integration produced a non-finite state");
  return out;
}

Eigen::VectorXd ObservationOperator::apply(const Eigen::VectorXd& x) const {
  if (x.size() != matrix.cols()) throw ShapeError("observation operator: state dimension mismatch");
  return matrix * x;
}

ObservationOperator make_observation_operator(Eigen::MatrixXd matrix) {
  if (matrix.rows() < 1 || matrix.cols() < 1) throw ShapeError("observation operator must be non-empty");
  if (!matrix.allFinite()) throw PreconditionError("observation operator has non-finite entries");
  return {std::move(matrix)};
}

ObservationOperator identity_operator(int dim) { return make_observation_operator(Eigen::MatrixXd::Identity(dim, dim)); }

ObservationOperator selector_operator(int dim, const std::vector<int>& coordinates) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(coordinates.size()), dim);
  for (std::size_t r = 0; r < coordinates.size(); ++r) {
    if (coordinates[r] < 0 || coordinates[r] >= dim) throw IndexError("selector coordinate out of range");
    m(static_cast<Eigen::Index>(r), coordinates[r]) = 1.0;
  }
  return make_observation_operator(std::move(m));
}

Eigen::VectorXd observe(const ObservationOperator& op, const Eigen::VectorXd& x, const Covariance& noise_cov,
                        std::uint64_t seed) {
  if (noise_cov.dim() != op.obs_dim()) throw ShapeError("observe: noise covariance does not match observation size");
  Eigen::VectorXd y = op.apply(x);
  if (noise_cov.is_zero()) return y;
  CounterRng rng(seed);
  return y + noise_cov.sample(rng);
}

void AssimilationProblem::validate() const {
  const int d = dim();
  if (d < 1) throw ShapeError("problem: empty background");
  if (window < 1) throw PreconditionError("problem: window must be >= 1");
  if (background_cov.dim() != d) throw ShapeError("problem: background covariance dimension mismatch");
  if (model.dim() != d) throw ShapeError("problem: model dimension mismatch");
  if (process_cov.dim() != 0 && process_cov.dim() != d) throw ShapeError("problem: process covariance dimension mismatch");
  for (const auto& obs : observations) {
    if (obs.time < 0 || obs.time >= window) throw PreconditionError("problem: observation time outside window");
    if (obs.op.state_dim() != d) throw ShapeError("problem: observation operator state dimension mismatch");
    if (obs.value.size() != obs.op.obs_dim()) throw ShapeError("problem: observation vector length mismatch");
    if (obs.cov.dim() != obs.op.obs_dim()) throw ShapeError("problem: observation covariance dimension mismatch");
  }
}

std::vector<Eigen::VectorXd> free_run(const DynamicsModel& model, const Eigen::VectorXd& x0, int steps) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(steps));
  Eigen::VectorXd x = x0;
  for (int k = 0; k < steps; ++k) {
    if (k > 0) x = propagate(model, x);
    out.push_back(x);
  }
  return out;
}

TwinExperiment generate_twin(const TwinConfig& config, std::uint64_t seed) {
  const int d = config.model.dim();
  if (config.window < 1) throw PreconditionError("twin: window must be >= 1");
  if (config.obs_every < 1) throw PreconditionError("twin: obs_every must be >= 1");
  if (config.truth_mean.size() != d) throw ShapeError("twin: truth mean dimension mismatch");
  if (config.truth_cov.dim() != d) throw ShapeError("twin: truth covariance dimension mismatch");

  CounterRng root(seed);
  CounterRng truth_rng = root.split(1);
  CounterRng background_rng = root.split(2);

  TwinExperiment twin;
  twin.seed = seed;
  const Eigen::VectorXd x0 = config.truth_mean + config.truth_cov.sample(truth_rng);
  twin.truth = free_run(config.model, x0, config.window);

  AssimilationProblem& p = twin.problem;
  p.model = config.model;
  p.window = config.window;
  p.background_cov = config.background_cov;
  p.process_cov = config.process_cov.dim() == 0 ? Covariance::zero(d) : config.process_cov;
  p.background = x0;
  if (config.perturb_background) p.background += config.background_cov.sample(background_rng);

  const Covariance no_noise = Covariance::zero(config.obs_op.obs_dim());
  for (int k = 0; k < config.window; k += config.obs_every) {
    const std::uint64_t obs_seed = derive_key(seed, 1000 + static_cast<std::uint64_t>(k));
    Observation obs;
    obs.time = k;
    obs.op = config.obs_op;
    obs.cov = config.obs_cov;
    obs.value = observe(config.obs_op, twin.truth[static_cast<std::size_t>(k)],
                        config.add_obs_noise ? config.obs_cov : no_noise, obs_seed);
    p.observations.push_back(std::move(obs));
  }
  p.validate();
  return twin;
}

}  // namespace qda
