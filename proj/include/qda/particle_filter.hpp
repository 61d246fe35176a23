// particle_filter.hpp
// Bootstrap particle filter with classical, weighted-superposition and
// variationally fitted (QVR) resampling.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "qda/covariance.hpp"
#include "qda/dynamics.hpp"
#include "qda/problem.hpp"
#include "qda/statevector.hpp"

namespace qda::pf {

struct ParticleEnsemble {
  Eigen::MatrixXd particles;  // d x N, one particle per column
  Eigen::VectorXd weights;    // N, sums to 1

  int size() const { return static_cast<int>(particles.cols()); }
  int dim() const { return static_cast<int>(particles.rows()); }
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
};

// Uniform weights; throws on an empty ensemble.
ParticleEnsemble make_ensemble(Eigen::MatrixXd particles);
// Checks shapes, non-negativity and |sum w - 1| < 1e-10.
void validate(const ParticleEnsemble& ensemble);
// N draws from N(mean, cov); particle i uses stream derive_key(seed, i).
ParticleEnsemble sample_prior(const Eigen::VectorXd& mean, const Covariance& cov, int count, std::uint64_t seed);

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct PredictStats {
  int divergent = 0;
};

// Model step plus process noise; a particle whose propagation diverges is
// replaced by its previous state clamped into `box` (unclamped without one).
ParticleEnsemble predict(const ParticleEnsemble& ensemble, const DynamicsModel& model, const Covariance& process_noise,
                         std::uint64_t seed, const std::optional<Box>& box = std::nullopt,
                         PredictStats* stats = nullptr);

struct UpdateStats {
  bool degenerate = false;  // every likelihood was zero; weights reset to uniform
};

// w_i <- w_i p(y | x_i) in log space. A zero covariance flag is an exact
// observation: likelihood 1 on H x == y, 0 elsewhere.
ParticleEnsemble update_weights(const ParticleEnsemble& ensemble, const Eigen::VectorXd& y,
                                const ObservationOperator& op, const Covariance& obs_cov,
                                UpdateStats* stats = nullptr);

double ess(const ParticleEnsemble& ensemble);
double ess(const Eigen::VectorXd& weights);

// Ancestor indices from one offset and N evenly spaced pointers.
std::vector<int> systematic_indices(const Eigen::VectorXd& weights, int count, std::uint64_t seed);
ParticleEnsemble resample_systematic(const ParticleEnsemble& ensemble, std::uint64_t seed);

// sum_i sqrt(w_i)|i> on max(1, ceil(log2 N)) qubits, zero padded.
StateVector weighted_superposition(const Eigen::VectorXd& weights);
// Ancestors from `shots` measurements of the weighted superposition, ascending.
std::vector<int> quantum_indices(const Eigen::VectorXd& weights, std::uint64_t shots, std::uint64_t seed);
// shots = 0 means N.
ParticleEnsemble resample_quantum(const ParticleEnsemble& ensemble, std::uint64_t shots, std::uint64_t seed);

struct QvrAnsatz {
  int num_qubits = 0;
  int layers = 0;
  Eigen::VectorXd thetas;  // layer-major, layers * num_qubits
};

// Y-rotation layers on |0...0>, with a ring of CZ gates between layers.
StateVector qvr_state(const QvrAnsatz& ansatz);
Eigen::VectorXd qvr_probabilities(const QvrAnsatz& ansatz);

struct QvrConfig {
  int layers = 2;
  int max_iterations = 300;
  double threshold = 1e-3;
  // false: D(p_theta || p); true: D(p || p_theta).
  bool reverse_kl = false;
};

struct QvrFit {
  QvrAnsatz ansatz;
  double divergence = 0.0;
  std::vector<double> trace;  // divergence after each iteration, starting at the initial angles
  bool reached_threshold = false;
};

inline constexpr double kKlFloor = 1e-12;

// KL divergence between the ansatz distribution and the target, zero target
// entries replaced by kKlFloor (renormalized). Never negative.
double qvr_divergence(const Eigen::VectorXd& model, const Eigen::VectorXd& target, bool reverse);
// d divergence / d theta via the two-term shift rule on the probabilities.
Eigen::VectorXd qvr_gradient(const QvrAnsatz& ansatz, const Eigen::VectorXd& target, bool reverse);
// Target length must be a power of two and sum to 1 within 1e-10.
QvrFit qvr_fit(const Eigen::VectorXd& target_weights, const QvrConfig& config, std::uint64_t seed);

enum class Resampler { systematic, quantum, qvr };

struct PfConfig {
  int particles = 100;
  Resampler resampler = Resampler::systematic;
  double threshold = 0.5;  // resample when ESS < threshold * N
  std::uint64_t seed = 0;
  QvrConfig qvr;
  std::optional<Box> box;
};

struct PfResult {
  std::vector<Eigen::VectorXd> analysis;  // weighted mean after each update
  std::vector<double> ess;                // after each update, before resampling
  std::vector<char> resampled;
  int resample_count = 0;
  int degenerate_updates = 0;
  int divergent_particles = 0;
  std::vector<double> qvr_divergences;  // final divergence of each QVR fit
  ParticleEnsemble final_ensemble;
};

PfResult run_pf(const AssimilationProblem& problem, const PfConfig& config);

// "time,ess,resampled,rmse" rows; rmse left empty without a truth trajectory.
void write_trace_csv(std::ostream& out, const PfResult& result, const std::vector<Eigen::VectorXd>& truth);

}  // namespace qda::pf
