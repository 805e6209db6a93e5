#include "hpl/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hpl/errors.hpp"
#include "hpl/metrics.hpp"
#include "hpl/optim.hpp"

namespace hpl {

void SegHeadConfig::validate() const {
  if (kind != "linear" && kind != "upernet")
    throw ParamError("seg head: unknown kind '" + kind + "'");
  if (dropout < 0 || dropout >= 1)
    throw ParamError("seg head: dropout must lie in [0, 1)");
  if (n_classes < 2) throw ParamError("seg head: need at least 2 classes");
  if (channels < 1) throw ParamError("seg head: channels must be >= 1");
  if (kind == "upernet") {
    if (pooling_scales.empty())
      throw ParamError("seg head: upernet needs pooling scales");
    for (int s : pooling_scales)
      if (s < 1) throw ParamError("seg head: pooling scales must be >= 1");
  }
}

SegHead::SegHead(const SegHeadConfig& cfg, const ViTConfig& backbone, uint64_t seed)
    : cfg_(cfg), backbone_depth_(backbone.depth) {
  cfg_.validate();
  const long D = backbone.dim;
  const long C = cfg_.n_classes;
  const Rng root(mix_seed({0x7365676865616400ULL, seed}));
  uint64_t stream = 0;
  auto randn = [&](std::vector<long> shape) {
    Rng r = root.split(stream++);
    return ag::make_var(Tensor::randn(std::move(shape), r, 0.02), true);
  };
  auto fill = [&](std::vector<long> shape, Real v) {
    return ag::make_var(Tensor::full(std::move(shape), v), true);
  };

  if (cfg_.kind == "linear") {
    bn_g_ = fill({D}, 1);
    bn_b_ = fill({D}, 0);
    run_mean_ = Tensor::full({D}, 0);
    run_var_ = Tensor::full({D}, 1);
    cls_w_ = randn({C, D});
    cls_b_ = fill({C}, 0);
    params_ = {{"seg.norm.weight", bn_g_},
               {"seg.norm.bias", bn_b_},
               {"seg.classifier.weight", cls_w_},
               {"seg.classifier.bias", cls_b_}};
    return;
  }

  if (backbone.depth < 4)
    throw ParamError("seg head: upernet needs a backbone with depth >= 4");
  const long F = cfg_.channels;
  for (int i = 0; i < 4; ++i) {
    lat_w_.push_back(randn({F, D}));
    lat_b_.push_back(fill({F}, 0));
    const std::string p = "seg.lateral." + std::to_string(i);
    params_.push_back({p + ".weight", lat_w_.back()});
    params_.push_back({p + ".bias", lat_b_.back()});
  }
  for (size_t s = 0; s < cfg_.pooling_scales.size(); ++s) {
    ppm_w_.push_back(randn({F, F}));
    ppm_b_.push_back(fill({F}, 0));
    const std::string p = "seg.ppm." + std::to_string(cfg_.pooling_scales[s]);
    params_.push_back({p + ".weight", ppm_w_.back()});
    params_.push_back({p + ".bias", ppm_b_.back()});
  }
  neck_w_ = randn({F, F * static_cast<long>(1 + cfg_.pooling_scales.size())});
  neck_b_ = fill({F}, 0);
  fuse_w_ = randn({F, 4 * F});
  fuse_b_ = fill({F}, 0);
  cls_w_ = randn({C, F});
  cls_b_ = fill({C}, 0);
  params_.push_back({"seg.bottleneck.weight", neck_w_});
  params_.push_back({"seg.bottleneck.bias", neck_b_});
  params_.push_back({"seg.fuse.weight", fuse_w_});
  params_.push_back({"seg.fuse.bias", fuse_b_});
  params_.push_back({"seg.classifier.weight", cls_w_});
  params_.push_back({"seg.classifier.bias", cls_b_});
}

// Drops whole channels per sample, scaling survivors by 1/(1-p); a no-op in
// evaluation mode. Draw order is (sample, channel).
ag::VarT<Real> SegHead::spatial_dropout(const ag::VarT<Real>& x, long B, long g,
                                        bool training, Rng* rng) const {
  if (!training || cfg_.dropout <= 0) return x;
  if (!rng) throw ParamError("seg head: training with dropout needs an rng");
  const long N = g * g, D = x->val.cols();
  const Real inv = static_cast<Real>(1.0 / (1.0 - cfg_.dropout));
  Tensor mask({B * N, D});
  for (long b = 0; b < B; ++b) {
    Tensor row({D});
    for (long d = 0; d < D; ++d)
      row[d] = rng->bernoulli(cfg_.dropout) ? Real(0) : inv;
    for (long t = 0; t < N; ++t)
      std::copy_n(row.ptr(), D, mask.ptr() + (b * N + t) * D);
  }
  return ag::mul(x, ag::constant(std::move(mask)));
}

ag::VarT<Real> SegHead::forward(const ViT::Output& enc, int image_size, bool training,
                                Rng* rng) {
  const long B = enc.batch;
  const long g = static_cast<long>(std::lround(std::sqrt(double(enc.tokens))));
  if (g * g != enc.tokens)
    throw ParamError("seg head: token count is not a square grid");
  if (cfg_.kind == "linear")
    return forward_linear(enc, B, g, image_size, training, rng);
  return forward_upernet(enc, B, g, image_size, training, rng);
}

ag::VarT<Real> SegHead::forward_linear(const ViT::Output& enc, long B, long g,
                                       int image_size, bool training, Rng* rng) {
  ag::VarT<Real> x = enc.patches;  // [B*N, D]
  if (training) {
    Tensor bm, bv;
    x = ag::batch_norm_train(x, bn_g_, bn_b_, &bm, &bv);
    // Torch-style running estimates (momentum 0.1) for evaluation.
    for (long d = 0; d < run_mean_.numel(); ++d) {
      run_mean_[d] = 0.9f * run_mean_[d] + 0.1f * bm[d];
      run_var_[d] = 0.9f * run_var_[d] + 0.1f * bv[d];
    }
  } else {
    x = ag::batch_norm_eval(x, bn_g_, bn_b_, run_mean_, run_var_);
  }
  x = spatial_dropout(x, B, g, training, rng);
  x = ag::linear(x, cls_w_, cls_b_);
  return ag::bilinear_upsample(x, B, g, g, image_size, image_size);
}

ag::VarT<Real> SegHead::forward_upernet(const ViT::Output& enc, long B, long g,
                                        int image_size, bool training, Rng* rng) {
  if (enc.layers.empty())
    throw ParamError("seg head: upernet forward needs per-layer tokens");
  const long N = g * g;

  // Patch tokens (cls stripped) from 4 evenly spaced depths, each projected
  // to the working width.
  std::vector<ag::VarT<Real>> proj(4);
  for (int i = 0; i < 4; ++i) {
    const int layer = (i + 1) * backbone_depth_ / 4 - 1;
    IndexVec rows(B * N);
    for (long b = 0; b < B; ++b)
      for (long t = 0; t < N; ++t) rows[b * N + t] = b * (N + 1) + 1 + t;
    auto tokens = ag::select_rows(enc.layers[layer], std::move(rows));
    proj[i] = ag::gelu(ag::linear(tokens, lat_w_[i], lat_b_[i]));
  }

  // Pyramid pooling on the deepest level.
  std::vector<ag::VarT<Real>> pieces{proj[3]};
  for (size_t s = 0; s < ppm_w_.size(); ++s) {
    const long scale = cfg_.pooling_scales[s];
    auto pooled = ag::adaptive_avg_pool(proj[3], B, g, g, scale);
    auto conv = ag::gelu(ag::linear(ag::reshape(pooled, {B * scale * scale, cfg_.channels}),
                                    ppm_w_[s], ppm_b_[s]));
    auto up = ag::bilinear_upsample(conv, B, scale, scale, g, g);
    pieces.push_back(ag::reshape(up, {B * N, cfg_.channels}));
  }
  auto deepest = ag::gelu(ag::linear(ag::concat_cols(pieces), neck_w_, neck_b_));

  // Top-down lateral fusion (all levels share the ViT grid resolution).
  std::vector<ag::VarT<Real>> fused(4);
  fused[3] = deepest;
  for (int i = 2; i >= 0; --i) fused[i] = ag::add(proj[i], fused[i + 1]);
  auto x = ag::gelu(ag::linear(ag::concat_cols(fused), fuse_w_, fuse_b_));

  x = spatial_dropout(x, B, g, training, rng);
  x = ag::linear(x, cls_w_, cls_b_);
  return ag::bilinear_upsample(x, B, g, g, image_size, image_size);
}

void SegTrainConfig::validate() const {
  if (epochs < 1) throw ParamError("seg training: epochs must be >= 1");
  if (lr <= 0) throw ParamError("seg training: lr must be positive");
  if (batch_size < 1) throw ParamError("seg training: batch_size must be >= 1");
}

namespace {

// Binary foreground targets from a mask image resized to the working grid.
std::shared_ptr<IndexVec> mask_targets(const ImageF& mask, int size) {
  ImageF m = (mask.h == size && mask.w == size) ? mask : resize_nearest(mask, size, size);
  auto t = std::make_shared<IndexVec>(size * static_cast<long>(size));
  for (long i = 0; i < size * static_cast<long>(size); ++i)
    (*t)[i] = m.data[i * m.c] > 0.5f ? 1 : 0;
  return t;
}

}  // namespace

std::vector<double> train_seg(const ViT& backbone, SegHead& head,
                              const CorpusManifest& corpus, const std::string& split,
                              const SegTrainConfig& cfg) {
  cfg.validate();
  const auto records = corpus.split_records(split);
  if (records.empty()) throw ParamError("seg training: split '" + split + "' is empty");
  const int size = backbone.config().image_size;

  AdamW opt;  // wd 0: plain Adam with a cosine-annealed lr
  opt.add_group(head.parameters(), 0.0);

  const long N = static_cast<long>(records.size());
  const long steps_per_epoch = (N + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long gstep = 0;
  std::vector<double> epoch_losses;

  std::vector<long> order(N);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed({cfg.seed, 0x736567ULL, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0;
    for (long b0 = 0; b0 < N; b0 += cfg.batch_size) {
      const long bsz = std::min<long>(cfg.batch_size, N - b0);
      std::vector<ImageF> images;
      auto targets = std::make_shared<IndexVec>();
      for (long i = 0; i < bsz; ++i) {
        const SampleRecord& rec = *records[order[b0 + i]];
        ImageF img = load_sample_image(corpus, rec);
        if (img.h != size || img.w != size) img = resize_bilinear(img, size, size);
        images.push_back(std::move(img));
        const auto t = mask_targets(load_sample_mask(corpus, rec), size);
        targets->insert(targets->end(), t->begin(), t->end());
      }

      ViT::Output enc;
      {
        ag::NoGradGuard ng;
        enc = backbone.encode_images(images, nullptr, head.wants_layers());
      }
      Rng drop_rng(mix_seed({cfg.seed, 0x64726f70ULL, static_cast<uint64_t>(epoch),
                             static_cast<uint64_t>(b0)}));
      auto logits = head.forward(enc, size, /*training=*/true, &drop_rng);
      auto logp = ag::log_softmax_rows(
          ag::reshape(logits, {bsz * size * static_cast<long>(size),
                               static_cast<long>(head.config().n_classes)}));
      auto loss = ag::nll_rows(logp, targets);
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
  return epoch_losses;
}

SegEvalResult evaluate_seg(const ViT& backbone, SegHead& head,
                           const CorpusManifest& corpus, const std::string& split,
                           const fs::path& dump_dir) {
  const auto records = corpus.split_records(split);
  if (records.empty()) throw ParamError("seg eval: split '" + split + "' is empty");
  const int size = backbone.config().image_size;
  const long C = head.config().n_classes;

  std::ofstream index;
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    index.open(dump_dir / "index.csv", std::ios::trunc);
    if (!index) throw IoError("cannot write " + (dump_dir / "index.csv").string());
    index << "sample_id,file\n";
  }

  SegEvalResult res;
  ag::NoGradGuard ng;
  constexpr long kBatch = 8;
  for (size_t b0 = 0; b0 < records.size(); b0 += kBatch) {
    const size_t b1 = std::min(records.size(), b0 + kBatch);
    std::vector<ImageF> images;
    for (size_t i = b0; i < b1; ++i) {
      ImageF img = load_sample_image(corpus, *records[i]);
      if (img.h != size || img.w != size) img = resize_bilinear(img, size, size);
      images.push_back(std::move(img));
    }
    const auto enc = backbone.encode_images(images, nullptr, head.wants_layers());
    const Tensor logits =
        head.forward(enc, size, /*training=*/false)->val;

    for (size_t i = b0; i < b1; ++i) {
      const SampleRecord& rec = *records[i];
      const long px = size * static_cast<long>(size);
      ByteTensor pred({px});
      const Real* row0 = logits.ptr() + (i - b0) * px * C;
      for (long p = 0; p < px; ++p) {
        const Real* row = row0 + p * C;
        pred[p] = static_cast<uint8_t>(std::max_element(row, row + C) - row);
      }
      const auto truth_idx = mask_targets(load_sample_mask(corpus, rec), size);
      ByteTensor truth({px});
      for (long p = 0; p < px; ++p) truth[p] = static_cast<uint8_t>((*truth_idx)[p]);

      const auto [dice, jac] = dice_jac(pred, truth);
      res.ids.push_back(rec.sample_id);
      res.dice.push_back(dice);
      res.jac.push_back(jac);

      if (!dump_dir.empty()) {
        ImageF m(size, size, 1);
        for (long p = 0; p < px; ++p) m.data[p] = pred[p] ? 1.0f : 0.0f;
        const std::string file = "pred_" + rec.sample_id + ".pgm";
        write_pnm(dump_dir / file, m);
        index << rec.sample_id << "," << file << "\n";
      }
    }
  }
  for (double d : res.dice) res.mean_dice += d;
  for (double j : res.jac) res.mean_jac += j;
  res.mean_dice /= static_cast<double>(res.dice.size());
  res.mean_jac /= static_cast<double>(res.jac.size());
  return res;
}

}  // namespace hpl
