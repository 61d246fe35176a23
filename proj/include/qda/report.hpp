// report.hpp
// Report files: report.json plus one CSV per trace and per plot series.
//
// Output is a pure function of the report contents. Wall-clock timings are
// written only when asked for, so repeated runs produce identical bytes.
#pragma once
#include <iosfwd>
#include <string>
#include <vector>
#include "qda/config.hpp"
#include "qda/pipeline.hpp"

namespace qda {

std::string version_string();

// Shortest round-trip decimal; empty for NaN.
std::string format_number(double x);

void write_table_csv(std::ostream& out, const Table& table);

struct WriteOptions {
  bool timings = false;
};

Json report_json(const AssimilationReport& report, const WriteOptions& options = {});
// Writes report.json, trace_<name>.csv and plotdata_<name>.csv into `dir`,
// creating it if needed. Returns the file names written.
std::vector<std::string> write_report(const AssimilationReport& report, const std::string& dir,
                                      const WriteOptions& options = {});

std::vector<std::string> write_twin(const TwinExperiment& twin, const Json& config_echo, std::uint64_t seed,
                                    const std::string& dir);

std::vector<std::string> write_comparison(const Comparison& comparison, const Json& config_echo, std::uint64_t seed,
                                          const std::string& dir, const WriteOptions& options = {});

std::vector<std::string> write_scaling(const ScalingReport& report, const Json& config_echo, std::uint64_t seed,
                                       const std::string& dir, const WriteOptions& options = {});

}  // namespace qda
