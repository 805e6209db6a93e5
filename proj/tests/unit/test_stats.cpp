#include <doctest.h>

#include <cmath>

#include "hpl/errors.hpp"
#include "hpl/stats.hpp"

using namespace hpl;

namespace {

// Independent oracle for the two-sided t p-value: Simpson integration of the
// Student t density over [-|t|, |t|].
double t_p_value_by_integration(double t, long df) {
  const double a = std::abs(t);
  if (a == 0) return 1.0;
  const int steps = 20000;
  const double h = 2 * a / steps;
  auto pdf = [df](double x) {
    const double c = std::exp(std::lgamma((df + 1) / 2.0) - std::lgamma(df / 2.0)) /
                     std::sqrt(df * M_PI);
    return c * std::pow(1 + x * x / df, -(df + 1) / 2.0);
  };
  double s = pdf(-a) + pdf(a);
  for (int i = 1; i < steps; ++i) s += pdf(-a + i * h) * (i % 2 ? 4 : 2);
  const double inside = s * h / 3;
  return 1.0 - inside;
}

}  // namespace

TEST_CASE("bootstrap of a constant metric is degenerate at the point") {
  auto rep = bootstrap_ci("const", 20, [](const std::vector<long>&) { return 0.75; }, 200, 5);
  CHECK(rep.point == 0.75);
  CHECK(rep.boot_mean == 0.75);
  CHECK(rep.boot_var == 0.0);
  CHECK(rep.ci_low == 0.75);
  CHECK(rep.ci_high == 0.75);
}

TEST_CASE("bootstrap is deterministic per seed and differs across seeds") {
  std::vector<double> vals;
  for (int i = 0; i < 30; ++i) vals.push_back(i % 7);
  auto a = bootstrap_ci_mean("m", vals, 100, 42);
  auto b = bootstrap_ci_mean("m", vals, 100, 42);
  auto c = bootstrap_ci_mean("m", vals, 100, 43);
  CHECK(a.replicates == b.replicates);
  CHECK(a.replicates != c.replicates);
}

TEST_CASE("interval endpoints use the bootstrap variance verbatim") {
  std::vector<double> vals{0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1, 1};
  auto rep = bootstrap_ci_mean("acc", vals, 500, 9);
  CHECK(rep.ci_low == doctest::Approx(rep.boot_mean - rep.boot_var).epsilon(1e-15));
  CHECK(rep.ci_high == doctest::Approx(rep.boot_mean + rep.boot_var).epsilon(1e-15));
  CHECK(rep.n_replicates == 500);
}

TEST_CASE("replicate mean self-consistency with the point estimate") {
  std::vector<double> vals;
  for (int i = 0; i < 50; ++i) vals.push_back(i < 35 ? 1.0 : 0.0);
  auto rep = bootstrap_ci_mean("acc", vals, 1000, 11);
  const double sd = std::sqrt(rep.boot_var);
  CHECK(std::abs(rep.boot_mean - rep.point) <= 3 * sd / std::sqrt(1000.0));
}

TEST_CASE("percentile interval is available behind a flag") {
  std::vector<double> vals;
  for (int i = 0; i < 40; ++i) vals.push_back(i % 2);
  auto rep = bootstrap_ci_mean("m", vals, 400, 3, true);
  CHECK(rep.has_percentile);
  CHECK(rep.pct_low <= rep.boot_mean);
  CHECK(rep.pct_high >= rep.boot_mean);
}

TEST_CASE("paired t test degenerate conventions") {
  std::vector<double> a{0.5, 0.6, 0.7, 0.8};
  auto same = paired_t_test_values(a, a);
  CHECK(same.t_statistic == 0.0);
  CHECK(same.p_value == 1.0);
  std::vector<double> c{0.5, 1.5, 2.5, 3.5};
  std::vector<double> d{0.25, 1.25, 2.25, 3.25};  // exact constant difference
  auto shifted = paired_t_test_values(c, d);
  CHECK(shifted.p_value == 0.0);
}

TEST_CASE("paired t test matches a direct n=5 computation") {
  std::vector<double> a{1.1, 2.0, 2.9, 4.2, 5.1};
  std::vector<double> b{1.0, 2.1, 2.5, 4.0, 5.0};
  // direct arithmetic: d = {0.1, -0.1, 0.4, 0.2, 0.1}
  const double md = (0.1 - 0.1 + 0.4 + 0.2 + 0.1) / 5.0;
  double ss = 0;
  for (double d : {0.1, -0.1, 0.4, 0.2, 0.1}) ss += (d - md) * (d - md);
  const double t_oracle = md / (std::sqrt(ss / 4.0) / std::sqrt(5.0));
  auto res = paired_t_test_values(a, b);
  CHECK(res.t_statistic == doctest::Approx(t_oracle).epsilon(1e-12));
  CHECK(res.n == 5);
  CHECK(res.p_value == doctest::Approx(t_p_value_by_integration(t_oracle, 4)).epsilon(1e-6));
}

TEST_CASE("t p-value agrees with numeric integration across df") {
  for (long df : {1L, 2L, 4L, 9L, 30L})
    for (double t : {0.5, 1.0, 2.2, 3.7})
      CHECK(t_test_p_value(t, df) ==
            doctest::Approx(t_p_value_by_integration(t, df)).epsilon(1e-6));
  CHECK(t_test_p_value(0.0, 5) == doctest::Approx(1.0));
  CHECK(t_test_p_value(50.0, 10) < 1e-10);
}

TEST_CASE("pairing refuses replicate vectors from different seeds") {
  std::vector<double> vals{0, 1, 1, 1, 0, 1, 0, 1};
  auto a = bootstrap_ci_mean("m", vals, 50, 1);
  auto b = bootstrap_ci_mean("m", vals, 50, 2);
  CHECK_THROWS_AS(paired_t_test(a, b), ParamError);
  auto c = bootstrap_ci_mean("m", vals, 50, 1);
  CHECK_NOTHROW(paired_t_test(a, c));
}

TEST_CASE("same-seed bootstraps share resample streams (pairing validity)") {
  std::vector<double> va{1, 0, 1, 1, 0, 1, 1, 1, 0, 1};
  std::vector<double> vb{1, 0, 1, 1, 0, 1, 1, 1, 0, 0};  // differs at one sample
  auto a = bootstrap_ci_mean("a", va, 100, 77);
  auto b = bootstrap_ci_mean("b", vb, 100, 77);
  // every replicate difference must be a multiple of 1/n (shared indices)
  for (long r = 0; r < 100; ++r) {
    const double diff = (a.replicates[r] - b.replicates[r]) * 10.0;
    CHECK(std::abs(diff - std::round(diff)) < 1e-9);
    CHECK(diff >= -1e-9);  // a >= b sample-wise, so paired diffs stay >= 0
  }
}

TEST_CASE("subgroup report: single subgroup equals the global report") {
  std::vector<double> vals{1, 0, 1, 1, 0, 1};
  std::vector<std::string> tags(vals.size(), "all");
  auto metric = [&](const std::vector<long>& idx) {
    double s = 0;
    for (long i : idx) s += vals[i];
    return s / idx.size();
  };
  auto groups = subgroup_report("acc", tags, metric, 100, 5);
  REQUIRE(groups.size() == 1);
  const auto& g = groups.at("all");
  auto global = bootstrap_ci("acc", static_cast<long>(vals.size()), metric, 100,
                             mix_seed({5, fnv1a64("all")}));
  CHECK(g.point == global.point);
  CHECK(g.boot_mean == global.boot_mean);
  CHECK(g.low_n == true);  // 6 < 10
}

TEST_CASE("subgroup accuracies recombine to the pooled estimate") {
  std::vector<double> vals;
  std::vector<std::string> tags;
  for (int i = 0; i < 30; ++i) {
    vals.push_back(i % 3 == 0 ? 1.0 : 0.0);
    tags.push_back(i < 12 ? "g1" : "g2");
  }
  auto metric = [&](const std::vector<long>& idx) {
    double s = 0;
    for (long i : idx) s += vals[i];
    return s / idx.size();
  };
  auto groups = subgroup_report("acc", tags, metric, 10, 1);
  const double pooled = metric([&] {
    std::vector<long> all(30);
    for (int i = 0; i < 30; ++i) all[i] = i;
    return all;
  }());
  const double recombined =
      (groups.at("g1").point * 12 + groups.at("g2").point * 18) / 30.0;
  CHECK(recombined == doctest::Approx(pooled).epsilon(1e-12));
  CHECK_FALSE(groups.at("g2").low_n);
}

TEST_CASE("metric report serializes its fields") {
  std::vector<double> vals{0.2, 0.4, 0.6};
  auto rep = bootstrap_ci_mean("demo", vals, 20, 4, true);
  auto j = rep.to_json();
  CHECK(j["metric_name"] == "demo");
  CHECK(j["n_replicates"] == 20);
  CHECK(j.contains("pct_low"));
  CHECK_FALSE(j.contains("replicates"));
  CHECK(rep.to_json(true)["replicates"].size() == 20);
}
