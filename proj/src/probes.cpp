#include "hpl/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hpl/autograd.hpp"
#include "hpl/errors.hpp"
#include "hpl/optim.hpp"
#include "hpl/rng.hpp"
#include "hpl/serialize.hpp"

namespace hpl {

namespace {

int derive_n_classes(const FeatureSet& gallery, int requested) {
  if (requested > 0) return requested;
  int mx = -1;
  for (int l : gallery.labels) mx = std::max(mx, l);
  return mx + 1;
}

double cosine(const float* a, const float* b, long d) {
  double dot = 0, na = 0, nb = 0;
  for (long i = 0; i < d; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0 ? dot / denom : 0.0;
}

}  // namespace

KnnResult knn_retrieve(const Tensor& query, const FeatureSet& gallery, int k,
                       int n_classes) {
  if (k < 1) throw ParamError("knn: k must be >= 1");
  if (!gallery.fully_labeled())
    throw ParamError("knn: gallery must be fully labeled");
  const long N = gallery.n(), D = gallery.dim();
  if (query.numel() != D)
    throw ParamError("knn: query dimension " + std::to_string(query.numel()) +
                     " does not match gallery dimension " + std::to_string(D));
  const int C = derive_n_classes(gallery, n_classes);
  for (int l : gallery.labels)
    if (l >= C) throw ParamError("knn: gallery label exceeds n_classes");

  std::vector<double> sims(N);
  for (long i = 0; i < N; ++i)
    sims[i] = cosine(query.ptr(), gallery.X.ptr() + i * D, D);

  const long kk = std::min<long>(k, N);
  std::vector<long> order(N);
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](long a, long b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + kk, order.end(), better);

  KnnResult res;
  res.neighbor_rows.assign(order.begin(), order.begin() + kk);
  res.scores.assign(C, 0.0);
  for (long r : res.neighbor_rows) res.scores[gallery.labels[r]] += 1.0 / kk;

  double top = 0;
  for (double s : res.scores) top = std::max(top, s);
  for (long r : res.neighbor_rows) {
    if (res.scores[gallery.labels[r]] == top) {
      res.predicted = gallery.labels[r];
      break;
    }
  }
  return res;
}

RetrievalEval knn_eval(const FeatureSet& queries, const FeatureSet& gallery, int k,
                       int n_classes) {
  int C = derive_n_classes(gallery, n_classes);
  if (n_classes <= 0)
    for (int l : queries.labels) C = std::max(C, l + 1);
  RetrievalEval ev;
  ev.scores = Tensor({queries.n(), static_cast<long>(C)});
  Tensor q({gallery.dim()});
  for (long i = 0; i < queries.n(); ++i) {
    std::copy_n(queries.X.ptr() + i * queries.dim(), queries.dim(), q.ptr());
    const KnnResult r = knn_retrieve(q, gallery, k, C);
    ev.predicted.push_back(r.predicted);
    for (int c = 0; c < C; ++c)
      ev.scores[i * C + c] = static_cast<Real>(r.scores[c]);
  }
  return ev;
}

void ProbeConfig::validate() const {
  if (epochs < 0) throw ParamError("probe config: epochs must be >= 0");
  if (lr <= 0) throw ParamError("probe config: lr must be positive");
  if (batch_size < 1) throw ParamError("probe config: batch_size must be >= 1");
}

Tensor LinearProbe::predict_proba(const Tensor& X) const {
  ag::NoGradGuard ng;
  auto logits = ag::linear(ag::constant(X), ag::constant(W), ag::constant(b));
  return ag::softmax_rows(logits)->val;
}

std::vector<int> LinearProbe::predict(const Tensor& X) const {
  const Tensor p = predict_proba(X);
  const long C = n_classes();
  std::vector<int> out(X.rows());
  for (long i = 0; i < X.rows(); ++i) {
    const Real* row = p.ptr() + i * C;
    out[i] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

LinearProbe make_linear_probe(long dim, int n_classes) {
  if (dim < 1 || n_classes < 2)
    throw ParamError("linear probe: need dim >= 1 and n_classes >= 2");
  LinearProbe p;
  p.W = Tensor({static_cast<long>(n_classes), dim});
  p.b = Tensor({static_cast<long>(n_classes)});
  return p;
}

std::vector<double> train_probe_inplace(LinearProbe& probe, const FeatureSet& train,
                                        const ProbeConfig& cfg) {
  cfg.validate();
  train.validate();
  if (!train.fully_labeled())
    throw ParamError("probe training: features must be fully labeled");
  const long N = train.n(), D = train.dim(), C = probe.n_classes();
  if (probe.dim() != D)
    throw ParamError("probe training: probe dimension does not match features");
  for (int l : train.labels)
    if (l >= C) throw ParamError("probe training: label exceeds n_classes");
  if (cfg.epochs == 0) return {};

  auto Wv = ag::make_var(probe.W, true);
  auto bv = ag::make_var(probe.b, true);
  AdamW opt;  // wd 0: plain Adam
  opt.add_group({{"probe.weight", Wv}, {"probe.bias", bv}}, 0.0);

  const long steps_per_epoch = (N + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long gstep = 0;
  std::vector<double> epoch_losses;

  std::vector<long> order(N);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed({cfg.seed, 0x70726f6265ULL, static_cast<uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0;
    for (long b0 = 0; b0 < N; b0 += cfg.batch_size) {
      const long bsz = std::min<long>(cfg.batch_size, N - b0);
      Tensor Xb({bsz, D});
      auto yb = std::make_shared<IndexVec>(bsz);
      for (long i = 0; i < bsz; ++i) {
        const long src = order[b0 + i];
        std::copy_n(train.X.ptr() + src * D, D, Xb.ptr() + i * D);
        (*yb)[i] = train.labels[src];
      }
      auto logp = ag::log_softmax_rows(ag::linear(ag::constant(std::move(Xb)), Wv, bv));
      auto loss = ag::nll_rows(logp, yb);
      epoch_loss += static_cast<double>(loss->val[0]) * bsz;

      const double lr = cosine_schedule(gstep, std::max<long>(1, total_steps - 1),
                                        cfg.lr, 0.0);
      opt.zero_grad();
      ag::backward(loss);
      opt.step(lr);
      ++gstep;
    }
    epoch_losses.push_back(epoch_loss / N);
  }
  probe.W = Wv->val;
  probe.b = bv->val;
  return epoch_losses;
}

LinearProbe train_linear_probe(const FeatureSet& train, int n_classes,
                               const ProbeConfig& cfg) {
  LinearProbe probe = make_linear_probe(train.dim(), n_classes);
  train_probe_inplace(probe, train, cfg);
  return probe;
}

void write_classification_csv(const fs::path& path, const std::vector<std::string>& ids,
                              const std::vector<int>& truth,
                              const std::vector<int>& predicted, const Tensor& scores) {
  const long N = static_cast<long>(ids.size());
  const long C = scores.cols();
  if (static_cast<long>(truth.size()) != N ||
      static_cast<long>(predicted.size()) != N || scores.rows() != N)
    throw ParamError("classification dump: column lengths differ");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,true,predicted";
  for (long c = 0; c < C; ++c) out << ",score_" << c;
  out << "\n";
  for (long i = 0; i < N; ++i) {
    out << ids[i] << "," << truth[i] << "," << predicted[i];
    for (long c = 0; c < C; ++c) out << "," << fmt_float(scores[i * C + c]);
    out << "\n";
  }
  if (!out) throw IoError("short write on " + path.string());
}

ClassificationDump read_classification_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty prediction file " + path.string());
  long C = -1;  // from the header
  {
    std::stringstream hs(line);
    std::string col;
    long cols = 0;
    while (std::getline(hs, col, ',')) ++cols;
    C = cols - 3;
    if (C < 1) throw DataError("malformed prediction header in " + path.string());
  }
  ClassificationDump d;
  std::vector<Real> flat;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (static_cast<long>(fields.size()) != C + 3)
      throw DataError("prediction row " + std::to_string(lineno) + " in " +
                      path.string() + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(C + 3));
    try {
      d.ids.push_back(fields[0]);
      d.truth.push_back(std::stoi(fields[1]));
      d.predicted.push_back(std::stoi(fields[2]));
      for (long c = 0; c < C; ++c) flat.push_back(std::stof(fields[3 + c]));
    } catch (const std::exception&) {
      throw DataError("unparsable number in prediction row " + std::to_string(lineno) +
                      " of " + path.string());
    }
  }
  d.scores = Tensor::from_vector({static_cast<long>(d.ids.size()), C}, flat);
  return d;
}

}  // namespace hpl
