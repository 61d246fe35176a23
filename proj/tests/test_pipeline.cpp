#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qda/config.hpp"
#include "qda/errors.hpp"
#include "qda/fourdvar.hpp"
#include "qda/parallel.hpp"
#include "qda/pipeline.hpp"
#include "qda/report.hpp"

using namespace qda;
namespace fs = std::filesystem;

namespace {

const char* kLinear = R"({
  "experiment": {
    "model": {"kind": "linear", "matrix": [[0.95, 0.1], [-0.1, 0.95]]},
    "window": 6,
    "truth_mean": [1.0, 0.0],
    "truth_cov": 1.0,
    "background_cov": [1.0, 0.5],
    "obs_cov": 0.5,
    "process_cov": 0.1
  },
  "encoding": {"bits_per_dim": 3, "lower": [-4, -4], "upper": [4, 4]},
  "method": "fourdvar",
  "seed": 11
})";

PipelineConfig linear(Method m) {
  PipelineConfig c = parse_config(kLinear);
  c.method = m;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qda_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> violations_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ValidationError& e) {
    return e.violations();
  }
  return {};
}

}  // namespace

TEST(Config, RoundTrip) {
  PipelineConfig c = linear(Method::qvpf);
  c.pf.resampler = pf::Resampler::qvr;
  c.qmcmc.kernel.kind = mcmc::ProposalKernel::Kind::uniform_global;
  c.experiment.observed = {1};
  c.experiment.obs_cov = Covariance::scaled_identity(1, 0.25);
  const fs::path dir = scratch("roundtrip");
  fs::create_directories(dir);
  save_config(c, (dir / "c.json").string());
  const PipelineConfig back = load_config((dir / "c.json").string());
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.experiment.background_cov.matrix(), c.experiment.background_cov.matrix());
  EXPECT_EQ(back.encoding->upper, c.encoding->upper);
}

TEST(Config, MissingFieldIsNamed) {
  const auto v = violations_of(R"({"experiment": {"model": {"kind": "lorenz63"}, "window": 3,
    "truth_mean": [0, 0, 1], "background_cov": 1, "obs_cov": 1}, "method": "pf"})");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], "line 1: (root): missing required field 'seed'");
}

TEST(Config, EveryViolationWithLine) {
  const auto v = violations_of(R"({
  "experiment": {
    "model": {"kind": "linear", "matrix": [[1, 0], [0]]},
    "window": 0,
    "truth_mean": [0, 0],
    "background_cov": -1,
    "obs_cov": [[1, 0.9], [0.9, 0.5]]
  },
  "method": "annealing",
  "seed": 1,
  "colour": "red"
})");
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v[0], "line 11: colour: unknown field");
  EXPECT_EQ(v[1], "line 3: experiment.model.matrix[1]: row length 1 differs from 2");
  EXPECT_EQ(v[2], "line 4: experiment.window: must be >= 1");
  EXPECT_EQ(v[3], "line 6: experiment.background_cov: variance must be finite and >= 0");
  EXPECT_EQ(v[4].rfind("line 7: experiment.obs_cov: covariance is not positive definite", 0), 0u) << v[4];
  EXPECT_EQ(v[5], "line 9: method: must be one of: fourdvar, pf, qaoa, qmcmc, qvpf");
}

TEST(Config, MalformedJsonReportsPosition) {
  const auto v = violations_of("{\n  \"seed\": 1,\n  \"method\" \"pf\"\n}");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rfind("line 3:", 0), 0u) << v[0];
}

TEST(Config, CovarianceForms) {
  const PipelineConfig c = linear(Method::fourdvar);
  EXPECT_EQ(c.experiment.background_cov.matrix(), Eigen::Vector2d(1.0, 0.5).asDiagonal().toDenseMatrix());
  EXPECT_TRUE(c.experiment.truth_cov.matrix().isIdentity());
  std::string zero = kLinear;
  zero.replace(zero.find("\"truth_cov\": 1.0"), 16, "\"truth_cov\": 0");
  EXPECT_TRUE(parse_config(zero).experiment.truth_cov.is_zero());
}

TEST(Config, QuantumMethodsNeedSmallEncoding) {
  std::string text = kLinear;
  text.replace(text.find("\"bits_per_dim\": 3"), 17, "\"bits_per_dim\": 9");
  text.replace(text.find("\"fourdvar\""), 10, "\"qaoa\"");
  const auto v = violations_of(text);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("<= 16"), std::string::npos);
}

TEST(Report, EchoesConfigVerbatim) {
  const PipelineConfig c = parse_config(kLinear);
  const AssimilationReport r = run_config(c);
  const fs::path dir = scratch("echo");
  const auto files = write_report(r, dir.string());
  const Json doc = Json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(doc["config"], Json::parse(kLinear));
  EXPECT_EQ(doc["version"], version_string());
  EXPECT_EQ(doc["rmse"].size(), 6u);
  EXPECT_FALSE(doc.contains("timings"));
  EXPECT_EQ(doc["notes"]["model_error"], "strong-constraint: process_cov is ignored");
  // 3 bits over [-4, 4]: 7 cells of width 8/7.
  EXPECT_DOUBLE_EQ(doc["notes"]["discretization"]["cell_width"][0].get<double>(), 8.0 / 7.0);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "trace_fourdvar.csv"));
  EXPECT_TRUE(fs::exists(dir / "plotdata_rmse.csv"));
  EXPECT_TRUE(report_json(r, {true}).contains("timings"));
}

TEST(Report, NumbersRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(format_number(std::nan("")), "");
}

TEST(Pipeline, RmseLengthEqualsWindow) {
  for (Method m : {Method::fourdvar, Method::pf, Method::qaoa, Method::qmcmc, Method::qvpf}) {
    PipelineConfig c = linear(m);
    c.qmcmc.steps = 300;
    c.qmcmc.burn_in = 50;
    c.qvpf.particles = 32;
    c.pf.particles = 32;
    const AssimilationReport r = run_config(c);
    EXPECT_EQ(r.rmse.size(), 6u) << method_name(m);
    EXPECT_EQ(r.status, "ok");
  }
}

TEST(Qvpf, NoiseFreeIdentityIsExact) {
  PipelineConfig c = parse_config(R"({
    "experiment": {"model": {"kind": "linear", "matrix": [[1, 0], [0, 1]]}, "window": 5,
      "truth_mean": [0.3, -1.2], "background_cov": 0, "obs_cov": 0},
    "encoding": {"bits_per_dim": 3, "lower": [-2, -2], "upper": [2, 2]},
    "method": "qvpf", "qvpf": {"particles": 16}, "seed": 4})");
  const AssimilationReport r = run_config(c);
  ASSERT_EQ(r.rmse.size(), 5u);
  for (double e : r.rmse) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(r.diagnostics["degenerate_cycles"], 5);
}

TEST(Qvpf, StagesInWorkflowOrder) {
  PipelineConfig c = linear(Method::qvpf);
  c.qvpf.particles = 32;
  const AssimilationReport r = run_config(c);
  const std::vector<int> first_cycle{1, 2, 3, 4, 5, 6, 7, 9, 8, 10, 11};
  ASSERT_GE(r.stages.size(), first_cycle.size());
  for (std::size_t i = 0; i < first_cycle.size(); ++i) EXPECT_EQ(r.stages[i].step, first_cycle[i]) << i;
  EXPECT_EQ(r.stages.back().step, 10);
}

TEST(Qvpf, FailureKeepsCompletedStages) {
  PipelineConfig c = linear(Method::qvpf);
  c.qaoa.depth = 0;
  try {
    run_config(c);
    FAIL() << "expected StageFailure";
  } catch (const StageFailure& f) {
    ASSERT_EQ(f.partial.stages.size(), 4u);
    EXPECT_EQ(f.partial.stages.back().stage, "qaoa_initial_state");
    EXPECT_NE(f.partial.status.find("step 4"), std::string::npos) << f.partial.status;
  }
}

TEST(Qvpf, LorenzBeatsFreeRun) {
  PipelineConfig c = load_config(QDA_SOURCE_DIR "/configs/lorenz_qvpf.json");
  c.experiment.window = 20;
  const AssimilationReport r = run_config(c);
  EXPECT_LT(r.rmse.back(), r.background_rmse.back());
}

TEST(Pipeline, ByteIdenticalAcrossRunsAndThreads) {
  PipelineConfig c = linear(Method::qvpf);
  c.qvpf.particles = 64;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  set_thread_count(1);
  const auto files = write_report(run_config(c), a.string());
  set_thread_count(4);
  write_report(run_config(c), b.string());
  set_thread_count(0);
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Compare, FourdvarMatchesNormalEquations) {
  std::vector<PipelineConfig> configs{linear(Method::fourdvar), linear(Method::pf), linear(Method::fourdvar)};
  const Comparison cmp = compare_methods(configs);
  ASSERT_EQ(cmp.rows.size(), 3u);
  const TwinExperiment twin = make_twin(configs[0].experiment, configs[0].seed);
  const auto oracle = fourdvar::trajectory(twin.problem, fourdvar::solve_linear(twin.problem));
  double s = 0.0;
  for (std::size_t k = 0; k < oracle.size(); ++k) s += rmse(oracle[k], twin.truth[k]);
  EXPECT_NEAR(cmp.rows[0].mean_rmse, s / oracle.size(), 1e-6);
  EXPECT_NEAR(cmp.rows[0].final_rmse, rmse(oracle.back(), twin.truth.back()), 1e-6);
  EXPECT_EQ(cmp.rows[0].final_rmse, cmp.rows[2].final_rmse);
  EXPECT_EQ(cmp.rows[0].mean_rmse, cmp.rows[2].mean_rmse);
  EXPECT_TRUE(std::isnan(cmp.rows[0].mean_ess));
  EXPECT_FALSE(std::isnan(cmp.rows[1].mean_ess));
}

TEST(Compare, FailuresBecomeRows) {
  std::vector<PipelineConfig> configs{linear(Method::qvpf), linear(Method::fourdvar)};
  configs[0].qaoa.depth = 0;
  const Comparison cmp = compare_methods(configs);
  ASSERT_EQ(cmp.rows.size(), 2u);
  EXPECT_NE(cmp.rows[0].status, "ok");
  EXPECT_EQ(cmp.rows[1].status, "ok");
}

TEST(Compare, RejectsDifferentSeeds) {
  std::vector<PipelineConfig> configs{linear(Method::fourdvar), linear(Method::pf)};
  configs[1].seed = 12;
  EXPECT_THROW(compare_methods(configs), ValidationError);
}

TEST(CompareConfig, PathsAndInlineRuns) {
  const fs::path dir = scratch("cmpcfg");
  fs::create_directories(dir);
  std::ofstream(dir / "a.json") << kLinear;
  std::ofstream(dir / "list.json") << R"({"runs": ["a.json", )" << kLinear << R"(], "seed": 3})";
  const CompareConfig cc = load_compare_config((dir / "list.json").string());
  ASSERT_EQ(cc.runs.size(), 2u);
  EXPECT_EQ(cc.runs[0].seed, 3u);
  EXPECT_EQ(cc.runs[1].seed, 3u);
  std::ofstream(dir / "bad.json") << R"({"runs": ["missing.json", {"method": "pf"}]})";
  try {
    load_compare_config((dir / "bad.json").string());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_GE(e.violations().size(), 3u);
    EXPECT_NE(e.violations()[1].find("runs[1]"), std::string::npos) << e.violations()[1];
  }
}

TEST(Scaling, FitRecoversPowerLaw) {
  const std::vector<double> x{1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, -0.75));
  const LogLogFit fit = fit_log_log(x, y);
  EXPECT_NEAR(fit.slope, -0.75, 1e-12);
  EXPECT_NEAR(fit.intercept, std::log(3.0), 1e-12);
  for (double r : fit.residuals) EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(Scaling, DegenerateGrids) {
  EXPECT_THROW(fit_log_log({1, 2, 3}, {1, 2, 3}), PreconditionError);
  EXPECT_THROW(fit_log_log({2, 2, 2, 2}, {1, 2, 3, 4}), PreconditionError);
  EXPECT_THROW(fit_log_log({1, 2, 3, 4}, {1, 0, 3, 4}), PreconditionError);
  EXPECT_THROW(epsilon_scaling({10, {0.5, 0.25}, 10}, 1), PreconditionError);
  EXPECT_THROW(epsilon_scaling({4, {0.5, 0.25, 0.125, 0.01}, 10}, 1), PreconditionError);
}

TEST(Scaling, EpsilonSlopes) {
  const ScalingReport r = epsilon_scaling({10, {0.25, 1.0 / 16, 1.0 / 64, 1.0 / 256, 1.0 / 1024}, 2000}, 9);
  ASSERT_EQ(r.curves.size(), 2u);
  EXPECT_TRUE(r.curves[0].pass()) << r.curves[0].fit.slope;
  EXPECT_TRUE(r.curves[1].pass()) << r.curves[1].fit.slope;
}

TEST(ScaleConfig, Validation) {
  EXPECT_NO_THROW(load_scale_config(QDA_SOURCE_DIR "/configs/scale_particles.json"));
  try {
    parse_scale_config(R"({"kind": "epsilon_scaling", "seed": 1, "num_qubits": 4, "grid": [0.5, 0.25, 0.01]})");
    FAIL();
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.violations().size(), 1u);
    EXPECT_NE(e.violations()[0].find("at least 4"), std::string::npos);
  }
}
