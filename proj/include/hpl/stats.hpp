#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/tensor.hpp"

namespace hpl {

// Bootstrap summary of one metric. The interval is [mu - v, mu + v] where v
// is the VARIANCE of the replicate metrics (not the standard deviation);
// that unusual convention is deliberate and preserved verbatim. A standard
// 2.5/97.5 percentile interval is available behind `with_percentile`.
struct MetricReport {
  std::string metric_name;
  double point = 0;
  double boot_mean = 0;  // mu
  double boot_var = 0;   // v
  double ci_low = 0;     // mu - v
  double ci_high = 0;    // mu + v
  long n_replicates = 0;
  long n_samples = 0;
  uint64_t seed = 0;
  bool low_n = false;
  bool has_percentile = false;
  double pct_low = 0;
  double pct_high = 0;
  std::vector<double> replicates;  // retained for pairing

  nlohmann::json to_json(bool include_replicates = false) const;
};

struct PairedTestResult {
  double t_statistic = 0;
  double p_value = 1.0;
  long n = 0;
};

// Metric evaluated on a resampled index multiset (indices into the sample
// set, repeats allowed).
using IndexMetricFn = std::function<double(const std::vector<long>&)>;

// Resamples `n_samples` indices with replacement `n_replicates` times; the
// replicate index sequence depends only on (seed, replicate, n_samples), so
// two metrics bootstrapped with the same seed are sample-wise paired.
MetricReport bootstrap_ci(const std::string& metric_name, long n_samples,
                          const IndexMetricFn& metric, long n_replicates, uint64_t seed,
                          bool with_percentile = false);

// Convenience: metric = mean of per-sample values.
MetricReport bootstrap_ci_mean(const std::string& metric_name,
                               const std::vector<double>& per_sample, long n_replicates,
                               uint64_t seed, bool with_percentile = false);

// Classic two-sided paired t-test on replicate vectors. Refuses vectors that
// were bootstrapped with different seeds or lengths (pairing would be bogus).
// Degenerate conventions: zero-variance zero-mean differences -> t=0, p=1;
// zero-variance nonzero-mean -> p=0.
PairedTestResult paired_t_test(const MetricReport& a, const MetricReport& b);
PairedTestResult paired_t_test_values(const std::vector<double>& a,
                                      const std::vector<double>& b);

// Two-sided p-value for a t statistic with df degrees of freedom.
double t_test_p_value(double t, long df);

// Per-subgroup bootstrap of the same metric. Subgroups smaller than
// `min_n` are reported with low_n = true rather than dropped.
std::map<std::string, MetricReport> subgroup_report(
    const std::string& metric_name, const std::vector<std::string>& tags,
    const IndexMetricFn& metric, long n_replicates, uint64_t seed, long min_n = 10);

double mean(const std::vector<double>& v);
double variance(const std::vector<double>& v);  // population variance (1/n)

}  // namespace hpl
