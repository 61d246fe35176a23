// problem.hpp
// The assimilation problem shared by the variational, sampling and filtering modules.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "qda/covariance.hpp"
#include "qda/dynamics.hpp"

namespace qda {

struct Observation {
  int time = 0;  // model step index within the window
  Eigen::VectorXd value;
  ObservationOperator op;
  Covariance cov;
};

struct AssimilationProblem {
  Eigen::VectorXd background;
  Covariance background_cov;
  std::vector<Observation> observations;
  DynamicsModel model;
  int window = 1;
  // Stochastic model error used by particle methods only; the variational
  // cost is strong-constraint and ignores it.
  Covariance process_cov;

  int dim() const { return static_cast<int>(background.size()); }
  // Throws ShapeError / PreconditionError on inconsistent shapes.
  void validate() const;
};

struct TwinConfig {
  DynamicsModel model;
  int window = 1;
  int obs_every = 1;
  Eigen::VectorXd truth_mean;
  Covariance truth_cov;  // zero flag: truth starts exactly at truth_mean
  Covariance background_cov;
  ObservationOperator obs_op;
  Covariance obs_cov;
  Covariance process_cov;
  bool perturb_background = true;
  bool add_obs_noise = true;
};

struct TwinExperiment {
  std::vector<Eigen::VectorXd> truth;  // one state per model step
  AssimilationProblem problem;
  std::uint64_t seed = 0;
};

// Truth run from a drawn initial state, noisy observations every obs_every
// steps, and a background drawn as truth plus a B-distributed perturbation.
TwinExperiment generate_twin(const TwinConfig& config, std::uint64_t seed);

// Deterministic model run of `steps` states starting from x0.
std::vector<Eigen::VectorXd> free_run(const DynamicsModel& model, const Eigen::VectorXd& x0, int steps);

}  // namespace qda
