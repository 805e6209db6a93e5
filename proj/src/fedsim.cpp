#include "hpl/fedsim.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "hpl/errors.hpp"
#include "hpl/metrics.hpp"
#include "hpl/rng.hpp"
#include "hpl/serialize.hpp"

#include "json.hpp"

namespace hpl {

void FederatedConfig::validate() const {
  if (local_epochs < 0) throw ParamError("local_epochs must be >= 0");
  if (global_rounds < 1) throw ParamError("global_rounds must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ParamError("federated lr must be positive");
  if (aggregation != "fedavg_weighted" && aggregation != "fedavg_uniform")
    throw ParamError("unknown aggregation '" + aggregation +
                     "' (expected fedavg_weighted or fedavg_uniform)");
  if (batch_size < 1) throw ParamError("batch_size must be >= 1");
  if (bootstrap_replicates < 1) throw ParamError("bootstrap_replicates must be >= 1");
}

LinearProbe local_train(const ClientState& client, const LinearProbe& global_head,
                        int round, const FederatedConfig& cfg) {
  LinearProbe head = global_head;
  if (cfg.local_epochs == 0) return head;
  ProbeConfig pc;
  pc.epochs = cfg.local_epochs;
  pc.lr = cfg.lr;
  pc.batch_size = cfg.batch_size;
  pc.seed = mix_seed({cfg.seed, fnv1a64(client.client_id),
                      static_cast<uint64_t>(round)});
  train_probe_inplace(head, client.train, pc);
  return head;
}

LinearProbe fedavg_aggregate(
    const std::vector<std::pair<const LinearProbe*, long>>& heads,
    const std::string& aggregation) {
  if (heads.empty()) throw ParamError("fedavg: no heads to aggregate");
  if (aggregation != "fedavg_weighted" && aggregation != "fedavg_uniform")
    throw ParamError("unknown aggregation '" + aggregation + "'");
  const LinearProbe& first = *heads.front().first;
  const long wn = first.W.numel();
  const long bn = first.b.numel();
  // Integer weights accumulated in doubles keep the mean exact for identical
  // inputs: each product fits the mantissa, and (sum*theta)/sum rounds back
  // to theta.
  std::vector<double> acc_w(wn, 0.0), acc_b(bn, 0.0);
  double total = 0;
  for (const auto& [head, n] : heads) {
    if (head->W.numel() != wn || head->b.numel() != bn ||
        head->W.cols() != first.W.cols())
      throw ParamError("fedavg: incompatible head shapes (" + head->W.shape_str() +
                       " vs " + first.W.shape_str() + ")");
    if (n < 0) throw ParamError("fedavg: negative sample count");
    const double w = aggregation == "fedavg_weighted" ? static_cast<double>(n) : 1.0;
    total += w;
    for (long i = 0; i < wn; ++i) acc_w[i] += w * static_cast<double>(head->W[i]);
    for (long i = 0; i < bn; ++i) acc_b[i] += w * static_cast<double>(head->b[i]);
  }
  if (!(total > 0)) throw ParamError("fedavg: aggregate weight is zero");
  LinearProbe out = first;
  for (long i = 0; i < wn; ++i) out.W[i] = static_cast<Real>(acc_w[i] / total);
  for (long i = 0; i < bn; ++i) out.b[i] = static_cast<Real>(acc_b[i] / total);
  return out;
}

std::string head_checksum(const LinearProbe& head) {
  Sha256 h;
  h.update(head.W.ptr(), static_cast<size_t>(head.W.numel()) * sizeof(Real));
  h.update(head.b.ptr(), static_cast<size_t>(head.b.numel()) * sizeof(Real));
  return h.hex_digest();
}

namespace {

// Chance level stands in when a bootstrap resample collapses to one class;
// macro AUROC is undefined there and the event is vanishingly rare.
double safe_macro_auroc(const std::vector<int>& labels, const Tensor& scores) {
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2) return 0.5;
  return macro_auroc(labels, scores);
}

}  // namespace

FederatedResult run_federated(std::vector<ClientState>& clients,
                              const FederatedConfig& cfg,
                              const std::filesystem::path& log_dir) {
  cfg.validate();
  if (clients.empty()) throw ParamError("federated run needs at least one client");
  const long dim = clients.front().head.dim();
  const int n_classes = clients.front().head.n_classes();
  for (const auto& c : clients) {
    if (c.head.dim() != dim || c.head.n_classes() != n_classes)
      throw ParamError("client '" + c.client_id + "' head is [" +
                       std::to_string(c.head.n_classes()) + ", " +
                       std::to_string(c.head.dim()) + "], expected [" +
                       std::to_string(n_classes) + ", " + std::to_string(dim) + "]");
    c.train.validate();
    c.test.validate();
    if (c.train.n() == 0 || !c.train.fully_labeled())
      throw DataError("client '" + c.client_id + "' train set must be labeled");
    if (c.test.n() == 0 || !c.test.fully_labeled())
      throw DataError("client '" + c.client_id + "' test set must be labeled");
    if (c.train.dim() != dim || c.test.dim() != dim)
      throw ParamError("client '" + c.client_id + "' feature width " +
                       std::to_string(c.train.dim()) + " != head width " +
                       std::to_string(dim));
  }

  FederatedResult res;
  res.global_head = make_linear_probe(dim, n_classes);
  std::ofstream log;
  if (!log_dir.empty()) {
    std::filesystem::create_directories(log_dir);
    res.log_path = log_dir / "rounds.jsonl";
    log.open(res.log_path);
    if (!log) throw DataError("cannot open " + res.log_path.string());
  }

  for (int round = 0; round < cfg.global_rounds; ++round) {
    std::vector<std::pair<const LinearProbe*, long>> locals;
    for (auto& c : clients) {
      c.head = local_train(c, res.global_head, round, cfg);
      locals.emplace_back(&c.head, c.n_samples());
    }
    res.global_head = fedavg_aggregate(locals, cfg.aggregation);

    FederatedRound fr;
    fr.round = round;
    fr.aggregated_checksum = head_checksum(res.global_head);
    for (const auto& c : clients) {
      fr.client_ids.push_back(c.client_id);
      fr.client_samples.push_back(c.n_samples());
      fr.client_checksums.push_back(head_checksum(c.head));
      const Tensor probs = res.global_head.predict_proba(c.test.X);
      fr.client_auroc.push_back(safe_macro_auroc(c.test.labels, probs));
      fr.client_f1.push_back(
          macro_f1(c.test.labels, res.global_head.predict(c.test.X), n_classes));
    }
    if (log) {
      nlohmann::json j;
      j["round"] = round;
      j["clients"] = nlohmann::json::array();
      for (size_t i = 0; i < clients.size(); ++i)
        j["clients"].push_back({{"client_id", fr.client_ids[i]},
                                {"n_samples", fr.client_samples[i]},
                                {"checksum", fr.client_checksums[i]}});
      j["aggregated_checksum"] = fr.aggregated_checksum;
      j["auroc"] = fr.client_auroc;
      j["f1"] = fr.client_f1;
      log << j.dump() << "\n";
    }
    res.rounds.push_back(std::move(fr));
  }

  // Final aggregated head, evaluated with uncertainty on each site's test
  // data. Predictions are computed once; the bootstrap only resamples rows.
  for (const auto& c : clients) {
    const Tensor probs = res.global_head.predict_proba(c.test.X);
    const std::vector<int> preds = res.global_head.predict(c.test.X);
    const auto& labels = c.test.labels;
    const long n = c.test.n();
    const long C = probs.cols();
    auto auroc_fn = [&](const std::vector<long>& idx) {
      std::vector<int> yl(idx.size());
      Tensor sc({static_cast<long>(idx.size()), C});
      for (size_t i = 0; i < idx.size(); ++i) {
        yl[i] = labels[idx[i]];
        std::copy_n(probs.ptr() + idx[i] * C, C, sc.ptr() + static_cast<long>(i) * C);
      }
      return safe_macro_auroc(yl, sc);
    };
    auto f1_fn = [&](const std::vector<long>& idx) {
      std::vector<int> yl(idx.size()), yp(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) {
        yl[i] = labels[idx[i]];
        yp[i] = preds[idx[i]];
      }
      return macro_f1(yl, yp, n_classes);
    };
    const uint64_t cseed = mix_seed({cfg.seed, fnv1a64(c.client_id), 0x626f6f74ULL});
    res.client_reports.emplace_back(
        bootstrap_ci(c.client_id + ".macro_auroc", n, auroc_fn,
                     cfg.bootstrap_replicates, cseed),
        bootstrap_ci(c.client_id + ".macro_f1", n, f1_fn, cfg.bootstrap_replicates,
                     cseed));
  }
  if (log && !log.good()) throw DataError("failed writing " + res.log_path.string());
  return res;
}

}  // namespace hpl
