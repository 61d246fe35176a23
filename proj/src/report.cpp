#include "qda/report.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace qda {

namespace fs = std::filesystem;

std::string version_string() { return std::string("qda ") + QDA_VERSION; }

std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void write_table_csv(std::ostream& out, const Table& table) {
  for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
    out << '\n';
  }
}

namespace {

Json states_json(const std::vector<Eigen::VectorXd>& states) {
  Json out = Json::array();
  for (const auto& x : states) {
    Json row = Json::array();
    for (Eigen::Index i = 0; i < x.size(); ++i) row.push_back(x[i]);
    out.push_back(row);
  }
  return out;
}

Json timings_json(const std::vector<std::pair<std::string, double>>& timings) {
  Json out = Json::object();
  for (const auto& [name, seconds] : timings) out[name] = seconds;
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::string write_csv(const fs::path& dir, const std::string& prefix, const Table& table) {
  std::ostringstream s;
  write_table_csv(s, table);
  const std::string name = prefix + table.name + ".csv";
  write_text(dir / name, s.str());
  return name;
}

fs::path prepare(const std::string& dir) {
  const fs::path p(dir);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> write_tables(const fs::path& dir, const std::vector<Table>& traces,
                                      const std::vector<Table>& plots) {
  std::vector<std::string> names;
  for (const auto& t : traces) names.push_back(write_csv(dir, "trace_", t));
  for (const auto& t : plots) names.push_back(write_csv(dir, "plotdata_", t));
  return names;
}

Json header(const char* command, std::uint64_t seed, const Json& config_echo) {
  return {{"version", version_string()}, {"command", command}, {"seed", seed}, {"config", config_echo}};
}

Json files_json(const std::vector<std::string>& names) {
  Json out = Json::array();
  for (const auto& n : names) out.push_back(n);
  return out;
}

}  // namespace

Json report_json(const AssimilationReport& r, const WriteOptions& options) {
  Json out = header("run", r.seed, r.config);
  out["method"] = r.method;
  out["status"] = r.status;
  out["final_rmse"] = r.rmse.empty() ? Json() : Json(r.rmse.back());
  out["final_background_rmse"] = r.background_rmse.empty() ? Json() : Json(r.background_rmse.back());
  out["rmse"] = r.rmse;
  out["background_rmse"] = r.background_rmse;
  out["diagnostics"] = r.diagnostics;
  out["notes"] = r.notes;
  Json stages = Json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"time", s.time}, {"step", s.step}, {"stage", s.stage}, {"detail", s.detail}});
  out["stages"] = stages;
  std::vector<Eigen::VectorXd> analysis;
  for (const auto& a : r.analysis)
    if (a.size() > 0) analysis.push_back(a);
  out["analysis"] = states_json(analysis);
  out["truth"] = states_json(r.truth);
  if (options.timings) out["timings"] = timings_json(r.timings);
  return out;
}

std::vector<std::string> write_report(const AssimilationReport& report, const std::string& dir,
                                      const WriteOptions& options) {
  const fs::path p = prepare(dir);
  std::vector<std::string> names = write_tables(p, report.traces, report.plots);
  Json doc = report_json(report, options);
  doc["files"] = files_json(names);
  write_text(p / "report.json", doc.dump(2) + "\n");
  names.insert(names.begin(), "report.json");
  return names;
}

std::vector<std::string> write_twin(const TwinExperiment& twin, const Json& config_echo, std::uint64_t seed,
                                    const std::string& dir) {
  const fs::path p = prepare(dir);
  const AssimilationProblem& problem = twin.problem;
  const int d = problem.dim();
  Table truth{"truth", {"time"}, {}};
  for (int i = 0; i < d; ++i) truth.columns.push_back("x_" + std::to_string(i));
  for (std::size_t k = 0; k < twin.truth.size(); ++k) {
    std::vector<double> row{static_cast<double>(k)};
    for (int i = 0; i < d; ++i) row.push_back(twin.truth[k][i]);
    truth.rows.push_back(std::move(row));
  }
  Table obs{"observations", {"time"}, {}};
  const int m = problem.observations.empty() ? 0 : static_cast<int>(problem.observations[0].value.size());
  for (int i = 0; i < m; ++i) obs.columns.push_back("y_" + std::to_string(i));
  Json obs_json = Json::array();
  for (const auto& o : problem.observations) {
    std::vector<double> row{static_cast<double>(o.time)};
    for (Eigen::Index i = 0; i < o.value.size(); ++i) row.push_back(o.value[i]);
    obs.rows.push_back(row);
    obs_json.push_back({{"time", o.time}, {"value", std::vector<double>(o.value.data(), o.value.data() + o.value.size())}});
  }
  const std::vector<std::string> names = write_tables(p, {truth, obs}, {});
  Json doc = header("twin", seed, config_echo);
  doc["twin_seed"] = twin.seed;
  doc["background"] = states_json({problem.background})[0];
  doc["truth"] = states_json(twin.truth);
  doc["observations"] = obs_json;
  doc["files"] = files_json(names);
  write_text(p / "report.json", doc.dump(2) + "\n");
  std::vector<std::string> all{"report.json"};
  all.insert(all.end(), names.begin(), names.end());
  return all;
}

std::vector<std::string> write_comparison(const Comparison& comparison, const Json& config_echo, std::uint64_t seed,
                                          const std::string& dir, const WriteOptions& options) {
  const fs::path p = prepare(dir);
  Table table{"comparison",
              {"row", "mean_rmse", "final_rmse", "final_background_rmse", "mean_ess", "acceptance_rate",
               "oracle_calls"},
              {}};
  if (options.timings) table.columns.push_back("seconds");
  Json rows = Json::array();
  for (std::size_t i = 0; i < comparison.rows.size(); ++i) {
    const ComparisonRow& r = comparison.rows[i];
    std::vector<double> v{static_cast<double>(i), r.mean_rmse, r.final_rmse, r.final_background_rmse, r.mean_ess,
                          r.acceptance_rate, static_cast<double>(r.oracle_calls)};
    Json row = {{"method", r.method},
                {"status", r.status},
                {"mean_rmse", r.mean_rmse},
                {"final_rmse", r.final_rmse},
                {"final_background_rmse", r.final_background_rmse},
                {"mean_ess", r.mean_ess},
                {"acceptance_rate", r.acceptance_rate},
                {"oracle_calls", r.oracle_calls}};
    if (options.timings) {
      v.push_back(r.seconds);
      row["seconds"] = r.seconds;
    }
    table.rows.push_back(std::move(v));
    rows.push_back(std::move(row));
  }
  std::vector<Table> plots{{"rmse", {"time"}, {}}};
  std::size_t longest = 0;
  for (std::size_t i = 0; i < comparison.reports.size(); ++i) {
    plots[0].columns.push_back("rmse_" + std::to_string(i) + "_" + comparison.rows[i].method);
    longest = std::max(longest, comparison.reports[i].rmse.size());
  }
  for (std::size_t k = 0; k < longest; ++k) {
    std::vector<double> row{static_cast<double>(k)};
    for (const auto& rep : comparison.reports) row.push_back(k < rep.rmse.size() ? rep.rmse[k] : std::nan(""));
    plots[0].rows.push_back(std::move(row));
  }
  const std::vector<std::string> names = write_tables(p, {table}, plots);
  Json doc = header("compare", seed, config_echo);
  doc["rows"] = rows;
  doc["files"] = files_json(names);
  write_text(p / "report.json", doc.dump(2) + "\n");
  std::vector<std::string> all{"report.json"};
  all.insert(all.end(), names.begin(), names.end());
  return all;
}

std::vector<std::string> write_scaling(const ScalingReport& report, const Json& config_echo, std::uint64_t seed,
                                       const std::string& dir, const WriteOptions& options) {
  const fs::path p = prepare(dir);
  std::vector<Table> plots;
  Json curves = Json::array();
  for (const auto& c : report.curves) {
    Table t{report.kind + "_" + c.name, {"x", "y", "fitted", "residual"}, {}};
    for (std::size_t i = 0; i < c.fit.x.size(); ++i)
      t.rows.push_back({c.fit.x[i], c.fit.y[i], std::exp(c.fit.intercept) * std::pow(c.fit.x[i], c.fit.slope),
                        c.fit.residuals[i]});
    plots.push_back(std::move(t));
    Json j = {{"name", c.name}, {"slope", c.fit.slope}, {"intercept", c.fit.intercept}, {"residuals", c.fit.residuals}};
    if (c.has_expected) {
      j["expected_slope"] = c.expected_slope;
      j["tolerance"] = c.tolerance;
      j["pass"] = c.pass();
    }
    curves.push_back(std::move(j));
  }
  const std::vector<std::string> names = write_tables(p, report.traces, plots);
  Json doc = header("scale", seed, config_echo);
  doc["kind"] = report.kind;
  doc["settings"] = report.settings;
  doc["curves"] = curves;
  doc["files"] = files_json(names);
  if (options.timings) doc["timings"] = timings_json(report.timings);
  write_text(p / "report.json", doc.dump(2) + "\n");
  std::vector<std::string> all{"report.json"};
  all.insert(all.end(), names.begin(), names.end());
  return all;
}

}  // namespace qda
