#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "hpl/caption.hpp"
#include "hpl/datagen.hpp"
#include "hpl/errors.hpp"
#include "hpl/features.hpp"
#include "hpl/metrics.hpp"
#include "hpl/probes.hpp"
#include "hpl/segmentation.hpp"
#include "hpl/serialize.hpp"
#include "hpl/textmetrics.hpp"

using namespace hpl;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("hpl_down_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ViTConfig tiny_vit(int depth = 2) {
  ViTConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.dim = 32;
  cfg.depth = depth;
  cfg.heads = 2;
  return cfg;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(Real)) == 0;
}

// Gallery at fixed angles on the unit circle; cosine order equals angular
// distance order, so neighbourhoods are known by construction.
FeatureSet angle_gallery(const std::vector<double>& degrees,
                         const std::vector<int>& labels) {
  FeatureSet g;
  g.X = Tensor({static_cast<long>(degrees.size()), 2});
  for (size_t i = 0; i < degrees.size(); ++i) {
    const double a = degrees[i] * M_PI / 180.0;
    g.X[2 * i] = static_cast<Real>(std::cos(a));
    g.X[2 * i + 1] = static_cast<Real>(std::sin(a));
    g.ids.push_back("g" + std::to_string(i));
    g.subgroups.emplace_back();
  }
  g.labels = labels;
  return g;
}

// Independent ranking oracle: full stable sort on exact double similarities,
// majority vote, ties resolved by the best-ranked member of the tied labels.
KnnResult knn_oracle(const Tensor& q, const FeatureSet& g, int k, int C) {
  const long N = g.n(), D = g.dim();
  std::vector<double> sims(N);
  for (long i = 0; i < N; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (long d = 0; d < D; ++d) {
      dot += double(q[d]) * g.X[i * D + d];
      na += double(q[d]) * q[d];
      nb += double(g.X[i * D + d]) * g.X[i * D + d];
    }
    const double den = std::sqrt(na) * std::sqrt(nb);
    sims[i] = den > 0 ? dot / den : 0.0;
  }
  std::vector<long> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  });
  KnnResult res;
  const long kk = std::min<long>(k, N);
  res.neighbor_rows.assign(order.begin(), order.begin() + kk);
  res.scores.assign(C, 0.0);
  for (long r : res.neighbor_rows) res.scores[g.labels[r]] += 1.0 / kk;
  const double top = *std::max_element(res.scores.begin(), res.scores.end());
  for (long r : res.neighbor_rows)
    if (res.scores[g.labels[r]] == top) {
      res.predicted = g.labels[r];
      break;
    }
  return res;
}

// Three well separated gaussian clusters along the coordinate axes.
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

}  // namespace

TEST_CASE("feature extraction is deterministic and follows manifest order") {
  const fs::path dir = temp_dir("feat");
  GenOptions gen;
  gen.n_per_class = 4;
  gen.n_classes = 3;
  gen.image_size = 32;
  gen.seed = 5;
  const CorpusManifest corpus = generate_classification_corpus(gen, dir);
  const ViT model(tiny_vit(), 9);

  const FeatureSet a = extract_features(model, corpus, "train");
  const FeatureSet b = extract_features(model, corpus, "train");
  const auto records = corpus.split_records("train");
  REQUIRE(a.n() == static_cast<long>(records.size()));
  CHECK(a.dim() == 32);
  CHECK(same_bytes(a.X, b.X));
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(a.ids[i] == records[i]->sample_id);
    const int want = records[i]->labeled() ? records[i]->label_ids.front() : -1;
    CHECK(a.labels[i] == want);
    CHECK(a.subgroups[i] == records[i]->subgroup);
  }
  // Different images embed differently.
  CHECK_FALSE(std::equal(a.X.ptr(), a.X.ptr() + a.dim(), a.X.ptr() + a.dim()));

  CHECK_THROWS_AS(extract_features(model, corpus, "nope"), DataError);
}

TEST_CASE("evaluation encoder reloads the requested tower from a checkpoint") {
  const fs::path dir = temp_dir("loadenc");
  const ViTConfig cfg = tiny_vit();
  const ViT teacher(cfg, 3), student(cfg, 4);

  std::vector<ParamEntry> entries;
  for (const auto& p : teacher.parameters())
    entries.push_back({"teacher." + p.name, &p.var->val});
  for (const auto& p : student.parameters())
    entries.push_back({"student." + p.name, &p.var->val});
  nlohmann::json meta;
  meta["kind"] = "pretrain";
  meta["config"] = {{"vit", vit_config_json(cfg)}};
  Checkpoint::save(dir / "ckpt", entries, meta);

  const ViT t = load_eval_encoder(dir / "ckpt");
  CHECK(params_sha256(t.parameters()) == params_sha256(teacher.parameters()));
  const ViT s = load_eval_encoder(dir / "ckpt", "student");
  CHECK(params_sha256(s.parameters()) == params_sha256(student.parameters()));
  CHECK(params_sha256(t.parameters()) != params_sha256(s.parameters()));
  for (const auto& p : t.parameters()) CHECK_FALSE(p.var->requires_grad);

  CHECK_THROWS_AS(load_eval_encoder(dir / "ckpt", "referee"), ParamError);
  CHECK_THROWS_AS(load_eval_encoder(dir / "missing"), IoError);

  nlohmann::json bad = meta;
  bad["kind"] = "something_else";
  Checkpoint::save(dir / "bad", entries, bad);
  CHECK_THROWS_AS(load_eval_encoder(dir / "bad"), DataError);
}

TEST_CASE("parameter hashing notices any weight change") {
  const ViT a(tiny_vit(), 3), b(tiny_vit(), 3);
  CHECK(params_sha256(a.parameters()) == params_sha256(b.parameters()));
  b.parameters()[0].var->val[0] += 1e-3f;
  CHECK(params_sha256(a.parameters()) != params_sha256(b.parameters()));
}

TEST_CASE("knn vote: unanimous neighbourhood") {
  const FeatureSet g = angle_gallery({0, 4, 8, 12, 120, 124, 128, 132},
                                     {0, 0, 0, 0, 1, 1, 1, 1});
  Tensor q = Tensor::from_vector({2}, {1.0f, 0.05f});
  const KnnResult r = knn_retrieve(q, g, 4);
  CHECK(r.predicted == 0);
  REQUIRE(r.scores.size() == 2);
  CHECK(r.scores[0] == 1.0);
  CHECK(r.scores[1] == 0.0);
  CHECK(r.neighbor_rows.size() == 4);
}

TEST_CASE("knn vote: 2-2-1 tie goes to the nearest tied label") {
  // Top five by angle: labels 1, 0, 0, 1, 2. Classes 0 and 1 tie at 2/5 and
  // the single most similar neighbour carries label 1.
  const FeatureSet g = angle_gallery({5, 10, 15, 20, 25, 170},
                                     {1, 0, 0, 1, 2, 0});
  Tensor q = Tensor::from_vector({2}, {1.0f, 0.0f});
  const KnnResult r = knn_retrieve(q, g, 5);
  CHECK(r.predicted == 1);
  REQUIRE(r.scores.size() == 3);
  CHECK(r.scores[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r.scores[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r.scores[2] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.neighbor_rows == std::vector<long>{0, 1, 2, 3, 4});
}

TEST_CASE("knn matches the brute-force oracle on random galleries") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const long N = 30 + rng.uniform_int(20), D = 6;
    const int C = 4;
    FeatureSet g;
    g.X = Tensor::randn({N, D}, rng);
    for (long i = 0; i < N; ++i) {
      g.ids.push_back("r" + std::to_string(i));
      g.labels.push_back(static_cast<int>(rng.uniform_int(C)));
      g.subgroups.emplace_back();
    }
    // Guarantee every class appears so the class count is stable.
    for (int c = 0; c < C; ++c) g.labels[c] = c;
    for (int k : {1, 3, 5}) {
      for (int qi = 0; qi < 10; ++qi) {
        Tensor q = Tensor::randn({D}, rng);
        const KnnResult got = knn_retrieve(q, g, k, C);
        const KnnResult want = knn_oracle(q, g, k, C);
        CHECK(got.predicted == want.predicted);
        CHECK(got.neighbor_rows == want.neighbor_rows);
        for (int c = 0; c < C; ++c)
          CHECK(got.scores[c] == doctest::Approx(want.scores[c]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("knn is invariant to positive rescaling of either side") {
  Rng rng(31);
  FeatureSet g;
  const long N = 24, D = 5;
  g.X = Tensor::randn({N, D}, rng);
  for (long i = 0; i < N; ++i) {
    g.ids.push_back("v" + std::to_string(i));
    g.labels.push_back(static_cast<int>(i % 3));
    g.subgroups.emplace_back();
  }
  Tensor q = Tensor::randn({D}, rng);
  const KnnResult base = knn_retrieve(q, g, 5);

  FeatureSet scaled = g;
  for (long i = 0; i < N; ++i)
    for (long d = 0; d < D; ++d) scaled.X[i * D + d] *= 0.5f * (i % 4 + 1);
  Tensor q3 = q;
  for (long d = 0; d < D; ++d) q3[d] *= 3.0f;
  const KnnResult r = knn_retrieve(q3, scaled, 5);
  CHECK(r.predicted == base.predicted);
  CHECK(r.neighbor_rows == base.neighbor_rows);
  CHECK(r.scores == base.scores);
}

TEST_CASE("knn rejects unusable inputs") {
  FeatureSet g = angle_gallery({0, 90, 180}, {0, 1, -1});
  Tensor q = Tensor::from_vector({2}, {1.0f, 0.0f});
  CHECK_THROWS_AS(knn_retrieve(q, g, 3), ParamError);  // unlabeled gallery
  g.labels = {0, 1, 1};
  CHECK_THROWS_AS(knn_retrieve(q, g, 0), ParamError);  // bad k
  Tensor q3 = Tensor::from_vector({3}, {1.0f, 0.0f, 0.0f});
  CHECK_THROWS_AS(knn_retrieve(q3, g, 3), ParamError);  // width mismatch
  CHECK_THROWS_AS(knn_retrieve(q, g, 3, 1), ParamError);  // label beyond C
  g.labels = {0, 1, 5};  // label beyond derived class count is fine if C covers it
  CHECK(knn_retrieve(q, g, 3).scores.size() == 6);
}

TEST_CASE("knn default is five neighbours") {
  const FeatureSet g =
      angle_gallery({0, 10, 20, 30, 40, 50, 60}, {0, 0, 0, 1, 1, 1, 1});
  Tensor q = Tensor::from_vector({2}, {1.0f, 0.1f});
  CHECK(knn_retrieve(q, g).neighbor_rows.size() == 5);
}

TEST_CASE("knn_eval scores feed macro auroc") {
  const FeatureSet train = cluster_features(20, 3, 4, 101);
  const FeatureSet test = cluster_features(10, 3, 4, 202);
  const RetrievalEval ev = knn_eval(test, train, 5);
  REQUIRE(ev.scores.rows() == test.n());
  REQUIRE(ev.scores.cols() == 3);
  CHECK(macro_f1(test.labels, ev.predicted, 3) > 0.9);
  CHECK(macro_auroc(test.labels, ev.scores) > 0.95);
}

TEST_CASE("linear probe separates clustered features perfectly") {
  const FeatureSet train = cluster_features(30, 3, 4, 11);
  const LinearProbe probe = train_linear_probe(train, 3);
  const std::vector<int> pred = probe.predict(train.X);
  CHECK(accuracy(train.labels, pred) == 1.0);
  CHECK(macro_auroc(train.labels, probe.predict_proba(train.X)) ==
        doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("linear probe on constant features matches the majority rate") {
  FeatureSet train;
  const long N = 10, D = 3;
  train.X = Tensor({N, D}, 0.7f);
  for (long i = 0; i < N; ++i) {
    train.ids.push_back("c" + std::to_string(i));
    train.labels.push_back(i < 6 ? 0 : (i < 9 ? 1 : 2));
    train.subgroups.emplace_back();
  }
  const LinearProbe probe = train_linear_probe(train, 3);
  const std::vector<int> pred = probe.predict(train.X);
  for (int p : pred) CHECK(p == 0);
  CHECK(accuracy(train.labels, pred) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("probe trainer edge cases and determinism") {
  const FeatureSet train = cluster_features(8, 2, 3, 99);

  LinearProbe untouched = make_linear_probe(3, 2);
  ProbeConfig zero;
  zero.epochs = 0;
  CHECK(train_probe_inplace(untouched, train, zero).empty());
  for (long i = 0; i < untouched.W.numel(); ++i) CHECK(untouched.W[i] == 0.0f);
  for (long i = 0; i < untouched.b.numel(); ++i) CHECK(untouched.b[i] == 0.0f);

  ProbeConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 42;
  LinearProbe a = make_linear_probe(3, 2), b = make_linear_probe(3, 2);
  const auto la = train_probe_inplace(a, train, cfg);
  const auto lb = train_probe_inplace(b, train, cfg);
  CHECK(la == lb);
  CHECK(same_bytes(a.W, b.W));
  CHECK(same_bytes(a.b, b.b));
  // Losses move downward overall on separable data.
  CHECK(la.back() < la.front());

  FeatureSet unlabeled = train;
  unlabeled.labels[0] = -1;
  LinearProbe c = make_linear_probe(3, 2);
  CHECK_THROWS_AS(train_probe_inplace(c, unlabeled, cfg), ParamError);
  FeatureSet high = train;
  high.labels[0] = 7;
  CHECK_THROWS_AS(train_probe_inplace(c, high, cfg), ParamError);
  CHECK_THROWS_AS(make_linear_probe(0, 2), ParamError);
  CHECK_THROWS_AS(make_linear_probe(4, 1), ParamError);
}

TEST_CASE("classification dump round trips exactly") {
  const fs::path dir = temp_dir("csv");
  const std::vector<std::string> ids = {"a1", "b2", "c3"};
  const std::vector<int> truth = {0, 2, 1};
  const std::vector<int> pred = {0, 1, 1};
  Tensor scores = Tensor::from_vector(
      {3, 3}, {0.7f, 0.2f, 0.1f, 0.1f, 0.6f, 0.3f, 0.25f, 0.5f, 0.25f});
  write_classification_csv(dir / "pred.csv", ids, truth, pred, scores);

  const ClassificationDump d = read_classification_csv(dir / "pred.csv");
  CHECK(d.ids == ids);
  CHECK(d.truth == truth);
  CHECK(d.predicted == pred);
  REQUIRE(d.scores.shape() == scores.shape());
  for (long i = 0; i < scores.numel(); ++i)
    CHECK(d.scores[i] == doctest::Approx(scores[i]).epsilon(1e-6));

  std::ofstream bad(dir / "bad.csv");
  bad << "sample_id,true,predicted,score_0\nx,0\n";
  bad.close();
  CHECK_THROWS_AS({ read_classification_csv(dir / "bad.csv"); }, DataError);
}

TEST_CASE("segmentation heads validate their configuration") {
  SegHeadConfig cfg;
  cfg.kind = "darknet";
  CHECK_THROWS_AS({ SegHead(cfg, tiny_vit(), 1); }, ParamError);
  cfg.kind = "linear";
  cfg.dropout = 1.0;
  CHECK_THROWS_AS({ SegHead(cfg, tiny_vit(), 1); }, ParamError);
  cfg.dropout = 0.1;
  cfg.n_classes = 1;
  CHECK_THROWS_AS({ SegHead(cfg, tiny_vit(), 1); }, ParamError);
  cfg.n_classes = 2;
  cfg.kind = "upernet";
  CHECK_THROWS_AS({ SegHead(cfg, tiny_vit(2), 1); }, ParamError);  // depth < 4
  cfg.pooling_scales = {};
  CHECK_THROWS_AS({ SegHead(cfg, tiny_vit(4), 1); }, ParamError);
}

TEST_CASE("segmentation forward produces full-resolution maps") {
  const ViT backbone(tiny_vit(4), 21);
  Rng rng(5);
  std::vector<ImageF> crops;
  for (int i = 0; i < 3; ++i) {
    ImageF im(32, 32, 3);
    for (auto& v : im.data) v = rng.uniform(0.0, 1.0);
    crops.push_back(std::move(im));
  }

  for (const char* kind : {"linear", "upernet"}) {
    SegHeadConfig cfg;
    cfg.kind = kind;
    SegHead head(cfg, backbone.config(), 7);
    ag::NoGradGuard ng;
    const auto enc = backbone.encode_images(crops, nullptr, head.wants_layers());
    const auto out = head.forward(enc, 32, false);
    CHECK(out->val.rows() == 3 * 32 * 32);
    CHECK(out->val.cols() == 2);
    // Evaluation mode is deterministic.
    const auto out2 = head.forward(enc, 32, false);
    CHECK(same_bytes(out->val, out2->val));
  }

  // The upernet path needs per-depth activations.
  SegHeadConfig ucfg;
  ucfg.kind = "upernet";
  SegHead uhead(ucfg, backbone.config(), 7);
  ag::NoGradGuard ng;
  const auto enc = backbone.encode_images(crops, nullptr, false);
  CHECK_THROWS_AS(uhead.forward(enc, 32, false), ParamError);
  // Training mode with dropout requires an rng.
  const auto enc2 = backbone.encode_images(crops, nullptr, true);
  CHECK_THROWS_AS(uhead.forward(enc2, 32, true, nullptr), ParamError);
}

TEST_CASE("segmentation training fits blobs and never touches the backbone") {
  const fs::path dir = temp_dir("seg");
  SegGenOptions gen;
  gen.n_samples = 28;
  gen.image_size = 32;
  gen.seed = 11;
  const CorpusManifest corpus = generate_segmentation_corpus(gen, dir);
  const ViT backbone(tiny_vit(), 3);
  const std::string before = params_sha256(backbone.parameters());

  SegHeadConfig cfg;  // linear
  SegHead untrained(cfg, backbone.config(), 7);
  const SegEvalResult base = evaluate_seg(backbone, untrained, corpus, "test");

  SegHead head(cfg, backbone.config(), 7);
  SegTrainConfig tc;
  tc.epochs = 12;
  tc.lr = 5e-3;
  tc.seed = 1;
  const auto losses = train_seg(backbone, head, corpus, "train", tc);
  REQUIRE(losses.size() == 12);
  CHECK(losses.back() < losses.front());
  CHECK(params_sha256(backbone.parameters()) == before);

  const SegEvalResult fit = evaluate_seg(backbone, head, corpus, "train");
  CHECK(fit.mean_dice > 0.6);
  const SegEvalResult ev = evaluate_seg(backbone, head, corpus, "test");
  CHECK(ev.mean_dice > base.mean_dice + 0.2);
  // Dice and Jaccard agree through their identity on every sample.
  for (size_t i = 0; i < ev.dice.size(); ++i)
    CHECK(ev.dice[i] ==
          doctest::Approx(2.0 * ev.jac[i] / (1.0 + ev.jac[i])).epsilon(1e-9));

  // Evaluation is deterministic across calls.
  const SegEvalResult ev2 = evaluate_seg(backbone, head, corpus, "test");
  CHECK(ev.mean_dice == ev2.mean_dice);
  CHECK(ev.dice == ev2.dice);
}

TEST_CASE("segmentation evaluation dumps one mask per sample") {
  const fs::path dir = temp_dir("segdump");
  SegGenOptions gen;
  gen.n_samples = 8;
  gen.image_size = 32;
  gen.seed = 4;
  const CorpusManifest corpus = generate_segmentation_corpus(gen, dir / "data");
  const ViT backbone(tiny_vit(), 3);
  SegHead head(SegHeadConfig{}, backbone.config(), 7);

  const SegEvalResult ev =
      evaluate_seg(backbone, head, corpus, "test", dir / "dump");
  REQUIRE(fs::exists(dir / "dump" / "index.csv"));
  std::ifstream idx(dir / "dump" / "index.csv");
  std::string line;
  std::getline(idx, line);
  CHECK(line == "sample_id,file");
  size_t rows = 0;
  while (std::getline(idx, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    CHECK(line.substr(0, comma) == ev.ids[rows]);
    CHECK(fs::exists(dir / "dump" / line.substr(comma + 1)));
    ++rows;
  }
  CHECK(rows == ev.ids.size());
}

TEST_CASE("caption vocabulary round trips and flags unknown words") {
  const CaptionVocab v = CaptionVocab::build({"a small dark blob", "a large blob"});
  CHECK(v.tokens[0] == "<bos>");
  CHECK(v.tokens[1] == "<eos>");
  CHECK(v.tokens[2] == "<unk>");
  const auto ids = v.encode("a small shiny blob");
  REQUIRE(ids.size() == 4);
  CHECK(ids[2] == CaptionVocab::kUnk);
  CHECK(v.decode(v.encode("a large dark blob")) == "a large dark blob");
  CHECK(v.encode("").empty());
}

TEST_CASE("adapters with a zero second factor reproduce the base decoder") {
  CaptionDecoder dec(32, 2, 2, 12, 10, 5);
  Rng rng(8);
  auto x = ag::make_var(Tensor::randn({3 * 7, 32}, rng, 0.5));
  const Tensor before = dec.decode(x, 3, 7)->val;

  LoRAConfig lcfg;
  lcfg.targets = {"attention", "mlp"};
  dec.apply_lora(lcfg, 77);
  REQUIRE(dec.has_lora());
  // 2 blocks x 4 sites x 2 factors.
  CHECK(dec.lora_parameters().size() == 16);
  const Tensor after = dec.decode(x, 3, 7)->val;
  REQUIRE(before.shape() == after.shape());
  Real worst = 0;
  for (long i = 0; i < before.numel(); ++i)
    worst = std::max(worst, std::abs(before[i] - after[i]));
  CHECK(worst == 0.0f);

  CHECK_THROWS_AS(dec.apply_lora(lcfg, 1), ParamError);
  LoRAConfig bad;
  bad.targets = {"attention", "norms"};
  CaptionDecoder dec2(32, 1, 2, 12, 10, 5);
  CHECK_THROWS_AS(dec2.apply_lora(bad, 1), ParamError);
}

TEST_CASE("adapter factors carry the configured shapes") {
  CaptionDecoder dec(32, 1, 2, 12, 10, 5);
  LoRAConfig cfg;
  cfg.rank = 3;
  cfg.targets = {"attention"};
  dec.apply_lora(cfg, 2);
  const auto lp = dec.lora_parameters();
  REQUIRE(lp.size() == 4);
  CHECK(lp[0].name == "blocks.0.qkv.lora_down");
  CHECK(lp[0].var->val.shape() == std::vector<long>{3, 32});
  CHECK(lp[1].name == "blocks.0.qkv.lora_up");
  CHECK(lp[1].var->val.shape() == std::vector<long>{96, 3});
  for (long i = 0; i < lp[1].var->val.numel(); ++i)
    CHECK(lp[1].var->val[i] == 0.0f);
  CHECK(lp[3].var->val.shape() == std::vector<long>{32, 3});
}

TEST_CASE("causal masking blocks information from future positions") {
  CaptionDecoder dec(32, 2, 2, 12, 10, 5);
  Rng rng(8);
  Tensor base = Tensor::randn({6, 32}, rng, 0.5);
  Tensor bumped = base;
  for (long d = 0; d < 32; ++d) bumped[5 * 32 + d] += 1.0f;

  const Tensor a = dec.decode(ag::make_var(base), 1, 6)->val;
  const Tensor b = dec.decode(ag::make_var(bumped), 1, 6)->val;
  for (long t = 0; t < 5; ++t)
    for (long v = 0; v < 12; ++v) CHECK(a[t * 12 + v] == b[t * 12 + v]);
  // The last row must differ, otherwise the check is vacuous.
  bool changed = false;
  for (long v = 0; v < 12; ++v) changed |= (a[5 * 12 + v] != b[5 * 12 + v]);
  CHECK(changed);
}

TEST_CASE("caption adaptation moves adapters but never the language model") {
  const fs::path dir = temp_dir("capt");
  CaptionGenOptions gen;
  gen.n_samples = 10;
  gen.image_size = 32;
  gen.seed = 13;
  const CorpusManifest corpus = generate_caption_corpus(gen, dir);
  const ViT encoder(tiny_vit(), 17);

  CaptionTrainConfig cfg;
  cfg.width = 32;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.lm_epochs = 10;
  cfg.epochs = 2;
  cfg.seed = 3;
  CaptionModel m = caption_build(encoder, corpus, "train", cfg);
  REQUIRE(m.lm_losses.size() == 10);
  CHECK(m.lm_losses.back() < m.lm_losses.front());

  const std::string base_before = params_sha256(m.decoder->base_parameters());
  const std::string lora_before = params_sha256(m.decoder->lora_parameters());
  const std::string enc_before = params_sha256(encoder.parameters());
  const auto losses = caption_adapt(m, encoder, corpus, "train");
  REQUIRE(losses.size() == 2);
  CHECK(params_sha256(m.decoder->base_parameters()) == base_before);
  CHECK(params_sha256(encoder.parameters()) == enc_before);
  CHECK(params_sha256(m.decoder->lora_parameters()) != lora_before);
}

TEST_CASE("caption generation is deterministic and bounded") {
  const fs::path dir = temp_dir("capgen");
  CaptionGenOptions gen;
  gen.n_samples = 6;
  gen.image_size = 32;
  gen.seed = 23;
  const CorpusManifest corpus = generate_caption_corpus(gen, dir);
  const ViT encoder(tiny_vit(), 17);

  CaptionTrainConfig cfg;
  cfg.width = 32;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.lm_epochs = 6;
  cfg.epochs = 1;
  cfg.seed = 3;
  const CaptionModel m = caption_train(encoder, corpus, "train", cfg);

  const auto recs = corpus.split_records("train");
  const ImageF img = load_sample_image(corpus, *recs[0]);
  const std::string a = caption_generate(m, encoder, img);
  const std::string b = caption_generate(m, encoder, img);
  CHECK(a == b);

  const std::string clipped = caption_generate(m, encoder, img, 3);
  long words = 0;
  std::istringstream ss(clipped);
  for (std::string w; ss >> w;) ++words;
  CHECK(words <= 3);
}

TEST_CASE("captioner memorizes a two-sample corpus") {
  const fs::path dir = temp_dir("capmem");
  CaptionGenOptions gen;
  gen.n_samples = 3;
  gen.image_size = 32;
  gen.seed = 31;
  const CorpusManifest corpus = generate_caption_corpus(gen, dir);
  const ViT encoder(tiny_vit(), 17);

  CaptionTrainConfig cfg;
  cfg.width = 32;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.lm_epochs = 60;
  cfg.epochs = 40;
  cfg.seed = 5;
  const CaptionModel m = caption_train(encoder, corpus, "train", cfg);

  const auto rows = caption_eval_rows(m, encoder, corpus, "train");
  double bleu1 = 0;
  for (const auto& r : rows)
    bleu1 += textm::bleu(r.hypothesis, {r.reference}, 1);
  bleu1 /= rows.size();
  CHECK(bleu1 > 0.9);
}

TEST_CASE("caption tables reject corpora without text") {
  const fs::path dir = temp_dir("capempty");
  GenOptions gen;  // classification corpus: no captions
  gen.n_per_class = 2;
  gen.n_classes = 2;
  gen.image_size = 32;
  gen.seed = 2;
  const CorpusManifest corpus = generate_classification_corpus(gen, dir);
  const ViT encoder(tiny_vit(), 17);
  CaptionTrainConfig cfg;
  cfg.width = 32;
  cfg.layers = 1;
  cfg.heads = 2;
  CHECK_THROWS_AS(caption_build(encoder, corpus, "train", cfg), DataError);
}

TEST_CASE("caption dump round trips") {
  const fs::path dir = temp_dir("captsv");
  const std::vector<CaptionEvalRow> rows = {
      {"s1", "a small dark blob", "a small blob"},
      {"s2", "a large light blob", "a large light blob"}};
  write_caption_tsv(dir / "cap.tsv", rows);
  const auto back = read_caption_tsv(dir / "cap.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].sample_id == rows[0].sample_id);
  CHECK(back[0].reference == rows[0].reference);
  CHECK(back[0].hypothesis == rows[0].hypothesis);
  CHECK(back[1].hypothesis == rows[1].hypothesis);

  std::ofstream bad(dir / "bad.tsv");
  bad << "sample_id\treference\thypothesis\nonly_one_field\n";
  bad.close();
  CHECK_THROWS_AS(read_caption_tsv(dir / "bad.tsv"), DataError);
}
