#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hpl/features.hpp"
#include "hpl/probes.hpp"
#include "hpl/stats.hpp"

namespace hpl {

// One simulated site: a private feature set, a held-out test set, and the
// site's current copy of the shared linear head. Sites never exchange raw
// features; only head parameters travel.
struct ClientState {
  std::string client_id;
  FeatureSet train;
  FeatureSet test;
  LinearProbe head;

  long n_samples() const { return train.n(); }
};

struct FederatedConfig {
  int local_epochs = 2;
  int global_rounds = 2;
  double lr = 2e-4;
  std::string aggregation = "fedavg_weighted";  // or fedavg_uniform
  int batch_size = 32;
  int bootstrap_replicates = 1000;
  uint64_t seed = 0;

  void validate() const;
};

// Trains a copy of the global head on one client's data and returns it; the
// client's own state is untouched. local_epochs == 0 returns the global head
// unchanged. Deterministic in (cfg.seed, client_id, round).
LinearProbe local_train(const ClientState& client, const LinearProbe& global_head,
                        int round, const FederatedConfig& cfg);

// Parameter mean across heads. Weighted mode scales each head by its sample
// count; uniform mode ignores counts. Aggregating identical heads returns
// those parameters exactly.
LinearProbe fedavg_aggregate(
    const std::vector<std::pair<const LinearProbe*, long>>& heads,
    const std::string& aggregation);

struct FederatedRound {
  int round = 0;
  std::vector<std::string> client_ids;
  std::vector<long> client_samples;
  std::vector<std::string> client_checksums;
  std::string aggregated_checksum;
  // Post-round point metrics per client, in client order.
  std::vector<double> client_auroc;
  std::vector<double> client_f1;
};

struct FederatedResult {
  LinearProbe global_head;
  std::vector<FederatedRound> rounds;
  // Final-round bootstrap reports per client: macro AUROC then macro F1.
  std::vector<std::pair<MetricReport, MetricReport>> client_reports;
  std::filesystem::path log_path;
};

// Runs the synchronous loop: broadcast the global head, train locally at
// every site, aggregate, repeat. After the last round the aggregated head is
// evaluated on each client's test split. When log_dir is non-empty a
// JSON-lines round log is written there.
FederatedResult run_federated(std::vector<ClientState>& clients,
                              const FederatedConfig& cfg,
                              const std::filesystem::path& log_dir = {});

std::string head_checksum(const LinearProbe& head);

}  // namespace hpl
