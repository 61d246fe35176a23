// dynamics.hpp
// Toy forecast models, observation operators and twin-experiment generation.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "qda/covariance.hpp"

namespace qda {

struct DynamicsModel {
  enum class Kind { linear, lorenz63 };

  Kind kind = Kind::linear;
  Eigen::MatrixXd matrix;  // linear only
  double dt = 0.01;        // lorenz63 only
  int substeps = 1;
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;

  int dim() const { return kind == Kind::linear ? static_cast<int>(matrix.rows()) : 3; }
  bool is_linear() const { return kind == Kind::linear; }
};

DynamicsModel linear_model(Eigen::MatrixXd matrix);
DynamicsModel lorenz63_model(double dt, int substeps, double sigma = 10.0, double rho = 28.0,
                             double beta = 8.0 / 3.0);

Eigen::Vector3d lorenz63_tendency(const DynamicsModel& model, const Eigen::Vector3d& x);
// One classic fourth-order Runge-Kutta step of size h.
Eigen::Vector3d rk4_step(const DynamicsModel& model, const Eigen::Vector3d& x, double h);

// One model time step: M x, or RK4 over dt * substeps.
Eigen::VectorXd propagate(const DynamicsModel& model, const Eigen::VectorXd& x);

struct ObservationOperator {
  Eigen::MatrixXd matrix;  // p x d

  int obs_dim() const { return static_cast<int>(matrix.rows()); }
  int state_dim() const { return static_cast<int>(matrix.cols()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

ObservationOperator make_observation_operator(Eigen::MatrixXd matrix);
ObservationOperator identity_operator(int dim);
// Rows pick the listed coordinates.
ObservationOperator selector_operator(int dim, const std::vector<int>& coordinates);

// H x plus N(0, noise_cov) noise; no noise for the zero flag.
Eigen::VectorXd observe(const ObservationOperator& op, const Eigen::VectorXd& x, const Covariance& noise_cov,
                        std::uint64_t seed);

}  // namespace qda
