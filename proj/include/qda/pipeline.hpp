// pipeline.hpp
// Twin-experiment runs of every method, the hybrid QVPF cycle, method
// comparison and the scaling sweeps.
#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>
#include "qda/config.hpp"
#include "qda/problem.hpp"

namespace qda {

// A named numeric table, written as CSV.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct StageLog {
  int time = 0;
  int step = 0;  // workflow step number, 1-11
  std::string stage;
  Json detail;
};

struct AssimilationReport {
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::vector<Eigen::VectorXd> analysis;
  std::vector<Eigen::VectorXd> truth;
  std::vector<Eigen::VectorXd> background_run;
  std::vector<double> rmse;
  std::vector<double> background_rmse;
  Json diagnostics = Json::object();
  // Model-error treatment and discretization error of the encoding, if any.
  Json notes = Json::object();
  std::vector<StageLog> stages;
  std::vector<Table> traces;  // trace_<name>.csv
  std::vector<Table> plots;   // plotdata_<name>.csv
  std::vector<std::pair<std::string, double>> timings;  // seconds
  Json config;
};

// A pipeline stage threw. Carries the report up to the failing stage.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(const std::string& what, AssimilationReport partial)
      : std::runtime_error(what), partial(std::move(partial)) {}
  AssimilationReport partial;
};

std::uint64_t twin_seed(std::uint64_t seed);
std::uint64_t method_seed(std::uint64_t seed);

TwinExperiment make_twin(const ExperimentConfig& experiment, std::uint64_t seed);

// Root-mean-square over coordinates.
double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Runs config.method on the twin and fills errors against its truth.
AssimilationReport run_method(const PipelineConfig& config, const TwinExperiment& twin);
AssimilationReport run_config(const PipelineConfig& config);

AssimilationReport run_qvpf(const PipelineConfig& config, const TwinExperiment& twin);

struct ComparisonRow {
  std::string method;
  std::string status;
  double mean_rmse = 0.0;
  double final_rmse = 0.0;
  double final_background_rmse = 0.0;
  double mean_ess = 0.0;          // NaN when the method has no ensemble
  double acceptance_rate = 0.0;   // NaN when the method has no chain
  std::uint64_t oracle_calls = 0;
  double seconds = 0.0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<AssimilationReport> reports;  // empty report for failed rows
};

// Every config must share the experiment and seed. Failures become rows.
Comparison compare_methods(const std::vector<PipelineConfig>& configs);

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> residuals;  // log y - fitted, per point
};

// Ordinary least squares of log y on log x. Needs >= 4 positive points
// with at least two distinct x.
LogLogFit fit_log_log(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingCurve {
  std::string name;
  LogLogFit fit;
  bool has_expected = false;
  double expected_slope = 0.0;
  double tolerance = 0.0;
  bool pass() const;
};

struct ScalingReport {
  std::string kind;
  std::vector<ScalingCurve> curves;
  std::vector<Table> traces;
  Json settings;
  std::vector<std::pair<std::string, double>> timings;
};

ScalingReport epsilon_scaling(const EpsilonScalingSettings& settings, std::uint64_t seed);

ScalingReport particle_scaling(const ParticleScalingSettings& settings, std::uint64_t seed);

}  // namespace qda
