// qda: twin experiments, single-method runs, method comparisons and scaling sweeps.
//
// Exit status: 0 success, 2 invalid command line or config, 1 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "qda/config.hpp"
#include "qda/errors.hpp"
#include "qda/parallel.hpp"
#include "qda/pipeline.hpp"
#include "qda/report.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kInvalid = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 0;
  bool timings = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file")->required();
  cmd->add_option("--seed", o.seed, "Seed, overriding the one in the config");
  cmd->add_option("--out", o.out, "Output directory, overriding the one in the config");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_flag("--timings", o.timings, "Write wall-clock timings into the reports");
}

std::string output_dir(const CommonOptions& o, const std::string& configured) {
  if (!o.out.empty()) return o.out;
  if (!configured.empty()) return configured;
  throw qda::ValidationError({"no output directory: pass --out or set \"out\" in the config"});
}

void list_files(const std::string& dir, const std::vector<std::string>& names) {
  for (const auto& n : names) std::cout << "  " << (std::filesystem::path(dir) / n).string() << '\n';
}

int cmd_twin(const CommonOptions& o) {
  qda::PipelineConfig config = qda::load_config(o.config);
  const std::uint64_t seed = o.seed.value_or(config.seed);
  const std::string dir = output_dir(o, config.out);
  const qda::TwinExperiment twin = qda::make_twin(config.experiment, seed);
  std::cout << "twin: " << twin.truth.size() << " steps, " << twin.problem.observations.size()
            << " observation times\n";
  list_files(dir, qda::write_twin(twin, config.source, seed, dir));
  return kOk;
}

int cmd_run(const CommonOptions& o) {
  qda::PipelineConfig config = qda::load_config(o.config);
  if (o.seed) config.seed = *o.seed;
  const std::string dir = output_dir(o, config.out);
  const qda::WriteOptions write{o.timings};
  try {
    const qda::AssimilationReport report = qda::run_config(config);
    std::cout << report.method << ": final rmse " << qda::format_number(report.rmse.back()) << ", background "
              << qda::format_number(report.background_rmse.back()) << '\n';
    list_files(dir, qda::write_report(report, dir, write));
  } catch (const qda::StageFailure& f) {
    std::cerr << "error: " << f.what() << '\n';
    list_files(dir, qda::write_report(f.partial, dir, write));
    return kRuntimeFailure;
  }
  return kOk;
}

int cmd_compare(const CommonOptions& o) {
  qda::CompareConfig cc = qda::load_compare_config(o.config);
  if (o.seed)
    for (auto& run : cc.runs) run.seed = *o.seed;
  const std::string dir = output_dir(o, cc.out);
  const qda::Comparison comparison = qda::compare_methods(cc.runs);
  for (std::size_t i = 0; i < comparison.rows.size(); ++i) {
    const auto& r = comparison.rows[i];
    std::cout << i << ' ' << r.method << ": final rmse " << qda::format_number(r.final_rmse) << " (" << r.status
              << ")\n";
  }
  list_files(dir, qda::write_comparison(comparison, cc.source, cc.runs.front().seed, dir, {o.timings}));
  return kOk;
}

int cmd_scale(const CommonOptions& o) {
  qda::ScaleConfig sc = qda::load_scale_config(o.config);
  if (o.seed) sc.seed = *o.seed;
  const std::string dir = output_dir(o, sc.out);
  const qda::ScalingReport report = sc.kind == qda::ScalingKind::epsilon_scaling
                                        ? qda::epsilon_scaling(sc.epsilon, sc.seed)
                                        : qda::particle_scaling(sc.particles, sc.seed);
  for (const auto& c : report.curves) {
    std::cout << c.name << ": slope " << qda::format_number(c.fit.slope);
    if (c.has_expected)
      std::cout << " (expected " << qda::format_number(c.expected_slope) << " +- " << qda::format_number(c.tolerance)
                << ", " << (c.pass() ? "within" : "outside") << ")";
    std::cout << '\n';
  }
  list_files(dir, qda::write_scaling(report, sc.source, sc.seed, dir, {o.timings}));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid quantum-classical data assimilation simulator"};
  app.set_version_flag("--version", qda::version_string());
  app.require_subcommand(1);

  CommonOptions twin, run, compare, scale;
  add_common(app.add_subcommand("twin", "Generate and save a twin experiment"), twin);
  add_common(app.add_subcommand("run", "Run one method on a twin experiment"), run);
  add_common(app.add_subcommand("compare", "Run several methods on the same twin experiment"), compare);
  add_common(app.add_subcommand("scale", "Run an epsilon or particle-count scaling sweep"), scale);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  const CommonOptions& o = name == "twin" ? twin : name == "run" ? run : name == "compare" ? compare : scale;
  try {
    qda::set_thread_count(o.threads);
    if (name == "twin") return cmd_twin(o);
    if (name == "run") return cmd_run(o);
    if (name == "compare") return cmd_compare(o);
    return cmd_scale(o);
  } catch (const qda::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}
