// config.hpp
// Experiment configuration: JSON schema, validation and serialization.
//
// Validation never stops at the first problem. Every violation is collected
// as "line N: dotted.path: message" and thrown together in a ValidationError.
#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>
#include "json.hpp"
#include "qda/encoding.hpp"
#include "qda/mcmc.hpp"
#include "qda/particle_filter.hpp"
#include "qda/problem.hpp"
#include "qda/qaoa.hpp"

namespace qda {

using Json = nlohmann::ordered_json;

enum class Method { fourdvar, pf, qaoa, qmcmc, qvpf };

const char* method_name(Method m);

struct ExperimentConfig {
  DynamicsModel model;
  int window = 1;
  int obs_every = 1;
  std::vector<int> observed;  // observed coordinates; empty means all
  Eigen::VectorXd truth_mean;
  Covariance truth_cov;
  Covariance background_cov;
  Covariance obs_cov;
  Covariance process_cov;
  bool perturb_background = true;
  bool add_obs_noise = true;

  TwinConfig twin() const;
};

struct FourdvarSettings {
  int max_iterations = 500;
  double gradient_tolerance = 1e-9;
};

struct PfSettings {
  int particles = 100;
  pf::Resampler resampler = pf::Resampler::systematic;
  double threshold = 0.5;
  pf::QvrConfig qvr;
};

struct QaoaSettings {
  int depth = 2;
  qaoa::QaoaConfig optimizer = [] {
    qaoa::QaoaConfig c;
    c.gradient = qaoa::GradientMethod::adjoint;
    c.max_iterations = 100;
    return c;
  }();
};

struct QmcmcSettings {
  std::uint64_t steps = 2000;
  std::uint64_t burn_in = 200;
  mcmc::ProposalKernel kernel{mcmc::ProposalKernel::Kind::bitflip_neighborhood, 1};
  mcmc::StepKind kind = mcmc::StepKind::quantum_corrected;
  std::uint64_t epsilon_shots = 0;
};

struct QvpfSettings {
  int particles = 256;
  int cycle_length = 1;  // model steps per assimilation cycle
  int refine_steps = 2;  // QMCMC moves per particle per cycle
  bool adaptive_box = true;
  double box_sigmas = 4.0;
};

struct PipelineConfig {
  ExperimentConfig experiment;
  std::optional<EncodingScheme> encoding;
  Method method = Method::fourdvar;
  FourdvarSettings fourdvar;
  PfSettings pf;
  QaoaSettings qaoa;
  QmcmcSettings qmcmc;
  QvpfSettings qvpf;
  std::uint64_t seed = 0;
  std::string out;
  Json source;  // the document as loaded, echoed into reports
};

// Mean oracle calls per accepted move over marked fractions eps = grid.
struct EpsilonScalingSettings {
  int num_qubits = 10;
  std::vector<double> grid;
  std::uint64_t trials = 2000;
};

// Posterior-mean error against the Kalman filter over particle counts.
struct ParticleScalingSettings {
  ExperimentConfig experiment;
  std::vector<double> grid;
  int replicates = 20;
  int qvpf_replicates = 4;  // 0 skips the QVPF curve
  std::optional<EncodingScheme> encoding;
  QaoaSettings qaoa;
  QmcmcSettings qmcmc;
  QvpfSettings qvpf;
};

struct CompareConfig {
  std::vector<PipelineConfig> runs;
  std::optional<std::uint64_t> seed;  // overrides every run's seed
  std::string out;
  Json source;
};

enum class ScalingKind { epsilon_scaling, particle_scaling };

struct ScaleConfig {
  ScalingKind kind = ScalingKind::epsilon_scaling;
  EpsilonScalingSettings epsilon;
  ParticleScalingSettings particles;
  std::uint64_t seed = 0;
  std::string out;
  Json source;
};

// Throws ValidationError listing every violation.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);
PipelineConfig config_from_json(const Json& doc);

Json config_to_json(const PipelineConfig& config);
void save_config(const PipelineConfig& config, const std::string& path);

// "runs" holds inline configs or paths relative to `base_dir`.
CompareConfig parse_compare_config(const std::string& text, const std::string& base_dir);
CompareConfig load_compare_config(const std::string& path);

ScaleConfig parse_scale_config(const std::string& text);
ScaleConfig load_scale_config(const std::string& path);

// Equal when their serialized forms are equal.
bool operator==(const PipelineConfig& a, const PipelineConfig& b);

// Reads "line:column" for a byte offset.
std::string text_position(const std::string& text, std::size_t offset);

// Line of the value at each JSON pointer ("" is the root).
std::map<std::string, int> index_lines(const std::string& text);

}  // namespace qda
