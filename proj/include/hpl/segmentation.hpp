#pragma once

#include <string>
#include <vector>

#include "hpl/autograd.hpp"
#include "hpl/dataset.hpp"
#include "hpl/vit.hpp"

namespace hpl {

struct SegHeadConfig {
  std::string kind = "linear";  // linear | upernet
  double dropout = 0.1;         // spatial (whole-channel) dropout
  std::vector<int> pooling_scales = {1, 2, 3, 6};
  int n_classes = 2;
  int channels = 64;  // working width of the upernet variant

  void validate() const;
};

// Frozen-backbone segmentation decoder. The linear variant normalizes the
// final patch tokens and maps them with a 1x1 convolution; the upernet
// variant fuses four evenly spaced backbone depths with a pyramid pooling
// module before classifying. Both upsample bilinearly to the input size.
class SegHead {
 public:
  SegHead(const SegHeadConfig& cfg, const ViTConfig& backbone, uint64_t seed);

  // enc must come from encode_images(crops, nullptr, wants_layers()).
  // Training mode uses batch statistics and spatial dropout (rng required
  // when dropout > 0); evaluation mode is deterministic.
  ag::VarT<Real> forward(const ViT::Output& enc, int image_size, bool training,
                         Rng* rng = nullptr);

  std::vector<ParamRef>& parameters() { return params_; }
  const std::vector<ParamRef>& parameters() const { return params_; }
  const SegHeadConfig& config() const { return cfg_; }
  bool wants_layers() const { return cfg_.kind == "upernet"; }

 private:
  ag::VarT<Real> forward_linear(const ViT::Output& enc, long B, long g,
                                int image_size, bool training, Rng* rng);
  ag::VarT<Real> forward_upernet(const ViT::Output& enc, long B, long g,
                                 int image_size, bool training, Rng* rng);
  ag::VarT<Real> spatial_dropout(const ag::VarT<Real>& x, long B, long g,
                                 bool training, Rng* rng) const;

  SegHeadConfig cfg_;
  int backbone_depth_ = 0;
  // linear: feature norm + classifier
  ag::VarT<Real> bn_g_, bn_b_;
  Tensor run_mean_, run_var_;
  // upernet: per-level laterals, pyramid convs, bottleneck, fusion
  std::vector<ag::VarT<Real>> lat_w_, lat_b_, ppm_w_, ppm_b_;
  ag::VarT<Real> neck_w_, neck_b_, fuse_w_, fuse_b_;
  ag::VarT<Real> cls_w_, cls_b_;
  std::vector<ParamRef> params_;
};

struct SegTrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 8;
  uint64_t seed = 0;

  void validate() const;
};

// Pixelwise cross entropy on the frozen backbone; only head parameters move.
// Returns per-epoch mean training losses.
std::vector<double> train_seg(const ViT& backbone, SegHead& head,
                              const CorpusManifest& corpus, const std::string& split,
                              const SegTrainConfig& cfg);

struct SegEvalResult {
  std::vector<std::string> ids;
  std::vector<double> dice, jac;
  double mean_dice = 0, mean_jac = 0;
};

// Argmax masks against the ground truth. Passing dump_dir writes one
// predicted-mask PGM per sample plus an index.csv mapping ids to files.
SegEvalResult evaluate_seg(const ViT& backbone, SegHead& head,
                           const CorpusManifest& corpus, const std::string& split,
                           const fs::path& dump_dir = {});

}  // namespace hpl
