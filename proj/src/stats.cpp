#include "hpl/stats.hpp"

#include <algorithm>
#include <cmath>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

double mean(const std::vector<double>& v) {
  if (v.empty()) throw ParamError("mean: empty vector");
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / v.size();
}

nlohmann::json MetricReport::to_json(bool include_replicates) const {
  nlohmann::json j{{"metric_name", metric_name},
                   {"point", point},
                   {"boot_mean", boot_mean},
                   {"boot_var", boot_var},
                   {"ci_low", ci_low},
                   {"ci_high", ci_high},
                   {"n_replicates", n_replicates},
                   {"n_samples", n_samples},
                   {"seed", seed},
                   {"low_n", low_n}};
  if (has_percentile) {
    j["pct_low"] = pct_low;
    j["pct_high"] = pct_high;
  }
  if (include_replicates) j["replicates"] = replicates;
  return j;
}

namespace {

// The replicate stream must depend only on (seed, replicate index, n); two
// metrics over the same sample set then share resamples and can be paired.
std::vector<long> resample_indices(uint64_t seed, long replicate, long n) {
  Rng rng(mix_seed({0x626f6f74u, seed, static_cast<uint64_t>(replicate)}));
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = rng.uniform_int(n);
  return idx;
}

}  // namespace

MetricReport bootstrap_ci(const std::string& metric_name, long n_samples,
                          const IndexMetricFn& metric, long n_replicates, uint64_t seed,
                          bool with_percentile) {
  if (n_samples < 1) throw ParamError("bootstrap_ci: need at least one sample");
  if (n_replicates < 1) throw ParamError("bootstrap_ci: need at least one replicate");
  MetricReport rep;
  rep.metric_name = metric_name;
  rep.n_samples = n_samples;
  rep.n_replicates = n_replicates;
  rep.seed = seed;

  std::vector<long> identity(n_samples);
  for (long i = 0; i < n_samples; ++i) identity[i] = i;
  rep.point = metric(identity);

  rep.replicates.resize(n_replicates);
  for (long b = 0; b < n_replicates; ++b)
    rep.replicates[b] = metric(resample_indices(seed, b, n_samples));

  rep.boot_mean = mean(rep.replicates);
  rep.boot_var = variance(rep.replicates);
  rep.ci_low = rep.boot_mean - rep.boot_var;
  rep.ci_high = rep.boot_mean + rep.boot_var;
  if (with_percentile) {
    std::vector<double> sorted = rep.replicates;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
      const double pos = q * (sorted.size() - 1);
      const size_t lo = static_cast<size_t>(pos);
      const size_t hi = std::min(lo + 1, sorted.size() - 1);
      return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
    };
    rep.has_percentile = true;
    rep.pct_low = quantile(0.025);
    rep.pct_high = quantile(0.975);
  }
  return rep;
}

MetricReport bootstrap_ci_mean(const std::string& metric_name,
                               const std::vector<double>& per_sample, long n_replicates,
                               uint64_t seed, bool with_percentile) {
  return bootstrap_ci(
      metric_name, static_cast<long>(per_sample.size()),
      [&per_sample](const std::vector<long>& idx) {
        double s = 0;
        for (long i : idx) s += per_sample[i];
        return s / idx.size();
      },
      n_replicates, seed, with_percentile);
}

namespace {

// Continued-fraction evaluation of the regularized incomplete beta function
// (modified Lentz), good to ~1e-14 for the df ranges used here.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double t_test_p_value(double t, long df) {
  if (df < 1) throw ParamError("t_test_p_value: df must be >= 1");
  return betai(df / 2.0, 0.5, df / (df + t * t));
}

PairedTestResult paired_t_test_values(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  if (a.size() != b.size()) throw ParamError("paired_t_test: length mismatch");
  const long n = static_cast<long>(a.size());
  if (n < 2) throw ParamError("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  for (long i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double md = mean(d);
  double ss = 0;
  for (double x : d) ss += (x - md) * (x - md);
  const double sd = std::sqrt(ss / (n - 1));
  PairedTestResult res;
  res.n = n;
  if (sd == 0.0) {
    res.t_statistic = 0.0;
    res.p_value = (md == 0.0) ? 1.0 : 0.0;
    return res;
  }
  res.t_statistic = md / (sd / std::sqrt(double(n)));
  res.p_value = t_test_p_value(res.t_statistic, n - 1);
  return res;
}

PairedTestResult paired_t_test(const MetricReport& a, const MetricReport& b) {
  if (a.seed != b.seed)
    throw ParamError("paired_t_test: replicate vectors come from different seeds (" +
                     std::to_string(a.seed) + " vs " + std::to_string(b.seed) +
                     "); pairing requires a shared resample stream");
  if (a.n_samples != b.n_samples)
    throw ParamError("paired_t_test: replicate vectors cover different sample counts");
  return paired_t_test_values(a.replicates, b.replicates);
}

std::map<std::string, MetricReport> subgroup_report(
    const std::string& metric_name, const std::vector<std::string>& tags,
    const IndexMetricFn& metric, long n_replicates, uint64_t seed, long min_n) {
  std::map<std::string, std::vector<long>> groups;
  for (size_t i = 0; i < tags.size(); ++i) groups[tags[i]].push_back(static_cast<long>(i));
  std::map<std::string, MetricReport> out;
  for (const auto& [tag, members] : groups) {
    const auto& m = members;
    auto local_metric = [&metric, &m](const std::vector<long>& idx) {
      std::vector<long> mapped(idx.size());
      for (size_t k = 0; k < idx.size(); ++k) mapped[k] = m[idx[k]];
      return metric(mapped);
    };
    MetricReport rep =
        bootstrap_ci(metric_name + "/" + tag, static_cast<long>(m.size()), local_metric,
                     n_replicates, mix_seed({seed, fnv1a64(tag)}));
    rep.low_n = static_cast<long>(m.size()) < min_n;
    out[tag] = std::move(rep);
  }
  return out;
}

}  // namespace hpl
