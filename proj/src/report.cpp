#include "hpl/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "hpl/errors.hpp"
#include "hpl/serialize.hpp"

namespace hpl {

void write_metrics_json(const std::filesystem::path& path, const std::string& task,
                        const std::map<std::string, MetricReport>& metrics) {
  nlohmann::json j;
  j["task"] = task;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [name, rep] : metrics) j["metrics"][name] = rep.to_json();
  write_json_file(path, j);
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.metric_name = j.at("metric_name").get<std::string>();
  r.point = j.at("point").get<double>();
  r.boot_mean = j.at("boot_mean").get<double>();
  r.boot_var = j.at("boot_var").get<double>();
  r.ci_low = j.at("ci_low").get<double>();
  r.ci_high = j.at("ci_high").get<double>();
  r.n_replicates = j.at("n_replicates").get<long>();
  r.n_samples = j.at("n_samples").get<long>();
  r.seed = j.at("seed").get<uint64_t>();
  r.low_n = j.at("low_n").get<bool>();
  if (j.contains("pct_low")) {
    r.has_percentile = true;
    r.pct_low = j.at("pct_low").get<double>();
    r.pct_high = j.at("pct_high").get<double>();
  }
  return r;
}

RunMetrics read_metrics_json(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.contains("task") || !j.contains("metrics"))
    throw DataError(path.string() + ": not a metrics file (task/metrics missing)");
  RunMetrics run;
  run.run_name = path.parent_path().filename().string();
  run.task = j.at("task").get<std::string>();
  for (const auto& [name, rep] : j.at("metrics").items())
    run.metrics.emplace(name, metric_report_from_json(rep));
  return run;
}

namespace {

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
  return out;
}

std::string fmt4(double v) { return fmt_float(v, 4); }

// One bar per run with the bootstrap interval as a whisker.
void write_metric_svg(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::pair<std::string, MetricReport>>& bars) {
  const int bar_w = 60, gap = 30, margin = 50, plot_h = 200;
  const int width = margin * 2 + static_cast<int>(bars.size()) * (bar_w + gap);
  const int height = plot_h + 2 * margin;
  double lo = 0, hi = 1e-9;
  for (const auto& [name, r] : bars) {
    lo = std::min({lo, r.ci_low, r.point});
    hi = std::max({hi, r.ci_high, r.point});
  }
  const double scale = plot_h / (hi - lo);
  auto y = [&](double v) { return margin + plot_h - (v - lo) * scale; };

  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << title
      << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << fmt4(y(std::max(0.0, lo)))
      << "\" x2=\"" << width - margin << "\" y2=\"" << fmt4(y(std::max(0.0, lo)))
      << "\" stroke=\"black\"/>\n";
  int x = margin + gap / 2;
  for (const auto& [name, r] : bars) {
    const double top = std::max(r.point, 0.0), bot = std::min(r.point, 0.0);
    out << "<rect x=\"" << x << "\" y=\"" << fmt4(y(top)) << "\" width=\"" << bar_w
        << "\" height=\"" << fmt4((top - bot) * scale)
        << "\" fill=\"steelblue\"/>\n";
    const int cx = x + bar_w / 2;
    out << "<line x1=\"" << cx << "\" y1=\"" << fmt4(y(r.ci_low)) << "\" x2=\"" << cx
        << "\" y2=\"" << fmt4(y(r.ci_high)) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << cx - 6 << "\" y1=\"" << fmt4(y(r.ci_low)) << "\" x2=\""
        << cx + 6 << "\" y2=\"" << fmt4(y(r.ci_low)) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << cx - 6 << "\" y1=\"" << fmt4(y(r.ci_high)) << "\" x2=\""
        << cx + 6 << "\" y2=\"" << fmt4(y(r.ci_high)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << height - margin + 16
        << "\" font-size=\"11\">" << name << "</text>\n";
    out << "<text x=\"" << x << "\" y=\"" << fmt4(y(top) - 4)
        << "\" font-size=\"11\">" << fmt4(r.point) << "</text>\n";
    x += bar_w + gap;
  }
  out << "</svg>\n";
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

void write_report(const std::filesystem::path& out_dir,
                  const std::vector<RunMetrics>& runs) {
  std::filesystem::create_directories(out_dir);
  std::set<std::string> tasks;
  for (const auto& r : runs) tasks.insert(r.task);

  std::ofstream md(out_dir / "summary.md");
  if (!md) throw DataError("cannot open " + (out_dir / "summary.md").string());
  md << "# Evaluation summary\n";
  for (const auto& task : tasks) {
    std::set<std::string> names;
    for (const auto& r : runs)
      if (r.task == task)
        for (const auto& [name, rep] : r.metrics) names.insert(name);
    md << "\n## " << task << "\n\n";
    md << "| run |";
    for (const auto& n : names) md << " " << n << " |";
    md << "\n|---|";
    for (size_t i = 0; i < names.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& r : runs) {
      if (r.task != task) continue;
      md << "| " << r.run_name << " |";
      for (const auto& n : names) {
        auto it = r.metrics.find(n);
        if (it == r.metrics.end()) {
          md << " - |";
        } else {
          md << " " << fmt4(it->second.point) << " [" << fmt4(it->second.ci_low)
             << ", " << fmt4(it->second.ci_high) << "]"
             << (it->second.low_n ? " (low n)" : "") << " |";
        }
      }
      md << "\n";
    }

    for (const auto& n : names) {
      std::vector<std::pair<std::string, MetricReport>> bars;
      for (const auto& r : runs) {
        if (r.task != task) continue;
        auto it = r.metrics.find(n);
        if (it != r.metrics.end()) bars.emplace_back(r.run_name, it->second);
      }
      if (bars.empty()) continue;
      const std::string file = "chart_" + slug(task) + "_" + slug(n) + ".svg";
      write_metric_svg(out_dir / file, task + " / " + n, bars);
      md << "\n![" << n << "](" << file << ")\n";
    }
  }
  if (!md) throw DataError("failed writing summary.md");
}

}  // namespace hpl
