#include <cstring>
#include <fstream>

#include "doctest.h"
#include "hpl/errors.hpp"
#include "hpl/fedsim.hpp"
#include "hpl/rng.hpp"

#include "json.hpp"

using namespace hpl;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("hpl_fed_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(Real)) == 0;
}

bool same_head(const LinearProbe& a, const LinearProbe& b) {
  return same_bytes(a.W, b.W) && same_bytes(a.b, b.b);
}

FeatureSet cluster_features(int per_class, int n_classes, long dim, uint64_t seed) {
  FeatureSet f;
  const long N = static_cast<long>(per_class) * n_classes;
  f.X = Tensor({N, dim});
  Rng rng(seed);
  for (long i = 0; i < N; ++i) {
    const int c = static_cast<int>(i) % n_classes;
    for (long d = 0; d < dim; ++d)
      f.X[i * dim + d] =
          static_cast<Real>((d == c ? 3.0 : 0.0) + rng.normal(0.0, 0.3));
    f.ids.push_back("s" + std::to_string(i));
    f.labels.push_back(c);
    f.subgroups.emplace_back();
  }
  return f;
}

ClientState make_client(const std::string& id, uint64_t seed, int per_class = 12,
                        long dim = 4, int n_classes = 2) {
  ClientState c;
  c.client_id = id;
  c.train = cluster_features(per_class, n_classes, dim, seed);
  c.test = cluster_features(8, n_classes, dim, seed + 1000);
  c.head = make_linear_probe(dim, n_classes);
  return c;
}

LinearProbe scalar_head(float w) {
  LinearProbe p = make_linear_probe(1, 2);
  p.W[0] = w;
  return p;
}

}  // namespace

TEST_CASE("fedavg of identical heads returns those parameters exactly") {
  Rng rng(4);
  LinearProbe p = make_linear_probe(3, 2);
  p.W = Tensor::randn({2, 3}, rng);
  p.b = Tensor::randn({2}, rng);
  for (const char* mode : {"fedavg_weighted", "fedavg_uniform"}) {
    const LinearProbe out =
        fedavg_aggregate({{&p, 5}, {&p, 9}, {&p, 2}}, mode);
    CHECK(same_head(out, p));
  }
}

TEST_CASE("fedavg arithmetic on scalar heads") {
  const LinearProbe a = scalar_head(0.0f), b = scalar_head(2.0f);
  const LinearProbe equal = fedavg_aggregate({{&a, 5}, {&b, 5}}, "fedavg_weighted");
  CHECK(equal.W[0] == 1.0f);

  // Weighted by (1, 2, 3) over parameters (3, 0, 1): (3 + 0 + 3) / 6 = 1.
  const LinearProbe x = scalar_head(3.0f), y = scalar_head(0.0f),
                    z = scalar_head(1.0f);
  const LinearProbe w =
      fedavg_aggregate({{&x, 1}, {&y, 2}, {&z, 3}}, "fedavg_weighted");
  CHECK(w.W[0] == 1.0f);
  // Uniform ignores the counts: (3 + 0 + 1) / 3.
  const LinearProbe u =
      fedavg_aggregate({{&x, 1}, {&y, 2}, {&z, 3}}, "fedavg_uniform");
  CHECK(u.W[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("fedavg is permutation invariant") {
  Rng rng(9);
  LinearProbe a = make_linear_probe(4, 3), b = make_linear_probe(4, 3),
              c = make_linear_probe(4, 3);
  a.W = Tensor::randn({3, 4}, rng);
  b.W = Tensor::randn({3, 4}, rng);
  c.W = Tensor::randn({3, 4}, rng);
  const LinearProbe fwd =
      fedavg_aggregate({{&a, 2}, {&b, 7}, {&c, 5}}, "fedavg_weighted");
  const LinearProbe rev =
      fedavg_aggregate({{&c, 5}, {&a, 2}, {&b, 7}}, "fedavg_weighted");
  CHECK(same_head(fwd, rev));
}

TEST_CASE("fedavg rejects unusable inputs") {
  const LinearProbe a = scalar_head(1.0f);
  LinearProbe wide = make_linear_probe(2, 2);
  CHECK_THROWS_AS(fedavg_aggregate({}, "fedavg_weighted"), ParamError);
  CHECK_THROWS_AS(fedavg_aggregate({{&a, 1}, {&wide, 1}}, "fedavg_weighted"),
                  ParamError);
  CHECK_THROWS_AS(fedavg_aggregate({{&a, 1}}, "fedmax"), ParamError);
  CHECK_THROWS_AS(fedavg_aggregate({{&a, 0}, {&a, 0}}, "fedavg_weighted"),
                  ParamError);
}

TEST_CASE("local training is deterministic and leaves inputs untouched") {
  ClientState c = make_client("site_a", 10);
  const LinearProbe global = make_linear_probe(4, 2);
  FederatedConfig cfg;
  cfg.seed = 3;

  const std::string head_before = head_checksum(c.head);
  const LinearProbe h1 = local_train(c, global, 0, cfg);
  const LinearProbe h2 = local_train(c, global, 0, cfg);
  CHECK(same_head(h1, h2));
  CHECK(head_checksum(c.head) == head_before);
  CHECK_FALSE(same_head(h1, global));

  // A different round reseeds the shuffle.
  const LinearProbe h3 = local_train(c, global, 1, cfg);
  CHECK_FALSE(same_head(h1, h3));

  FederatedConfig frozen = cfg;
  frozen.local_epochs = 0;
  CHECK(same_head(local_train(c, global, 0, frozen), global));
}

TEST_CASE("federated loop learns separable sites") {
  std::vector<ClientState> clients = {make_client("site_a", 10),
                                      make_client("site_b", 20),
                                      make_client("site_c", 30)};
  FederatedConfig cfg;
  cfg.global_rounds = 3;
  cfg.local_epochs = 4;
  cfg.lr = 5e-3;  // separable toy data converges quickly
  cfg.bootstrap_replicates = 200;
  cfg.seed = 1;
  const fs::path dir = temp_dir("loop");
  const FederatedResult res = run_federated(clients, cfg, dir);

  REQUIRE(res.rounds.size() == 3);
  REQUIRE(res.client_reports.size() == 3);
  for (const auto& [auroc, f1] : res.client_reports) {
    CHECK(auroc.point > 0.95);
    CHECK(auroc.ci_low <= auroc.point);
    // Shared resample seed keeps the two metrics pairable.
    CHECK(auroc.seed == f1.seed);
  }

  // Round log: one JSON line per round with ids, sizes and checksums.
  std::ifstream log(res.log_path);
  REQUIRE(log.good());
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("round").get<int>() == rows);
    REQUIRE(j.at("clients").size() == 3);
    CHECK(j.at("clients")[0].at("client_id") == "site_a");
    CHECK(j.at("clients")[0].at("n_samples").get<long>() == 24);
    CHECK(j.at("clients")[0].at("checksum").get<std::string>().size() == 64);
    CHECK(j.at("auroc").size() == 3);
    CHECK(j.at("f1").size() == 3);
    ++rows;
  }
  CHECK(rows == 3);
  CHECK(res.rounds.back().aggregated_checksum == head_checksum(res.global_head));

  // The whole simulation is reproducible.
  std::vector<ClientState> again = {make_client("site_a", 10),
                                    make_client("site_b", 20),
                                    make_client("site_c", 30)};
  const FederatedResult res2 = run_federated(again, cfg);
  CHECK(same_head(res.global_head, res2.global_head));
  for (size_t i = 0; i < res.client_reports.size(); ++i) {
    CHECK(res.client_reports[i].first.boot_mean ==
          res2.client_reports[i].first.boot_mean);
    CHECK(res.client_reports[i].second.boot_mean ==
          res2.client_reports[i].second.boot_mean);
  }
}

TEST_CASE("a single client reproduces centralized training") {
  std::vector<ClientState> clients = {make_client("solo", 42, 16)};
  FederatedConfig cfg;
  cfg.global_rounds = 3;
  cfg.local_epochs = 2;
  cfg.seed = 7;
  const FederatedResult fed = run_federated(clients, cfg);

  // Centralized arm: same data, same per-round seeds, learning rate schedule
  // restarting each round.
  const ClientState solo = make_client("solo", 42, 16);
  LinearProbe central = make_linear_probe(4, 2);
  for (int round = 0; round < cfg.global_rounds; ++round) {
    ProbeConfig pc;
    pc.epochs = cfg.local_epochs;
    pc.lr = cfg.lr;
    pc.batch_size = cfg.batch_size;
    pc.seed = mix_seed({cfg.seed, fnv1a64("solo"), static_cast<uint64_t>(round)});
    train_probe_inplace(central, solo.train, pc);
  }
  for (long i = 0; i < central.W.numel(); ++i)
    CHECK(std::abs(fed.global_head.W[i] - central.W[i]) <= 1e-6f);
  for (long i = 0; i < central.b.numel(); ++i)
    CHECK(std::abs(fed.global_head.b[i] - central.b[i]) <= 1e-6f);
}

TEST_CASE("federated runs reject inconsistent sites") {
  FederatedConfig cfg;

  std::vector<ClientState> shapes = {make_client("a", 1), make_client("b", 2)};
  shapes[1].head = make_linear_probe(4, 3);
  CHECK_THROWS_AS(run_federated(shapes, cfg), ParamError);

  std::vector<ClientState> unlabeled = {make_client("a", 1)};
  unlabeled[0].train.labels[0] = -1;
  CHECK_THROWS_AS(run_federated(unlabeled, cfg), DataError);

  std::vector<ClientState> none;
  CHECK_THROWS_AS(run_federated(none, cfg), ParamError);

  FederatedConfig bad = cfg;
  bad.aggregation = "fedmedian";
  std::vector<ClientState> ok = {make_client("a", 1)};
  CHECK_THROWS_AS(run_federated(ok, bad), ParamError);
}
