#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hpl/stats.hpp"

namespace hpl {

// Metrics of one evaluation run, keyed by metric name.
struct RunMetrics {
  std::string run_name;
  std::string task;
  std::map<std::string, MetricReport> metrics;
};

// metrics.json inside a run directory: {"task": ..., "metrics": {name: report}}.
void write_metrics_json(const std::filesystem::path& path, const std::string& task,
                        const std::map<std::string, MetricReport>& metrics);
RunMetrics read_metrics_json(const std::filesystem::path& path);
MetricReport metric_report_from_json(const nlohmann::json& j);

// Writes summary.md (one table per task) plus one SVG bar chart per metric,
// bars = runs with the bootstrap interval drawn as whiskers.
void write_report(const std::filesystem::path& out_dir,
                  const std::vector<RunMetrics>& runs);

}  // namespace hpl
