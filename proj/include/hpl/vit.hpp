#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/autograd.hpp"
#include "hpl/image.hpp"
#include "hpl/rng.hpp"
#include "hpl/serialize.hpp"

namespace hpl {

struct ViTConfig {
  int image_size = 64;  // size the positional table is laid out for
  int patch_size = 8;
  int dim = 192;
  int depth = 6;
  int heads = 3;
  double mlp_ratio = 4.0;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  long n_patches(int crop_size) const;
};

nlohmann::json vit_config_json(const ViTConfig& cfg);
ViTConfig vit_config_from_json(const nlohmann::json& j);

template <class S>
struct ParamRefT {
  std::string name;
  ag::VarT<S> var;
};
using ParamRef = ParamRefT<Real>;

// Flattens square crops into the patch-pixel matrix the encoder consumes:
// one row per patch, (dy, dx, channel) order, centered to zero mean.
template <class S>
TensorT<S> patchify(const std::vector<ImageF>& crops, int patch_size);

template <class S>
struct ViTBlockT {
  ag::VarT<S> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  ag::VarT<S> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

// Pre-LN vision transformer over square crops. Positional embeddings are
// learned at the configured global grid and bilinearly interpolated when a
// crop uses a different grid.
template <class S>
class ViTT {
 public:
  ViTT(const ViTConfig& cfg, uint64_t init_seed);

  struct Output {
    ag::VarT<S> cls;      // [B, D]
    ag::VarT<S> patches;  // [B*N, D], final layer, post-norm
    long batch = 0;
    long tokens = 0;  // N = patches per crop
    // Full token sequences [B*(N+1), D] after each block, pre final norm;
    // filled only when want_layers is set.
    std::vector<ag::VarT<S>> layers;
  };

  // patch_pixels: [B*N, P*P*3] from patchify(); mask (optional): B*N bytes,
  // nonzero entries replaced by the learned mask token before position add.
  Output encode(const TensorT<S>& patch_pixels, long batch, int crop_size,
                std::shared_ptr<ByteTensor> mask = nullptr,
                bool want_layers = false) const;

  Output encode_images(const std::vector<ImageF>& crops,
                       std::shared_ptr<ByteTensor> mask = nullptr,
                       bool want_layers = false) const;

  std::vector<ParamRefT<S>>& parameters() { return params_; }
  const std::vector<ParamRefT<S>>& parameters() const { return params_; }
  void set_trainable(bool on);
  const ViTConfig& config() const { return cfg_; }

 private:
  ag::VarT<S> positional_rows(int grid) const;

  ViTConfig cfg_;
  ag::VarT<S> patch_w_, patch_b_, cls_tok_, mask_tok_, pos_;
  std::vector<ViTBlockT<S>> blocks_;
  ag::VarT<S> lnf_g_, lnf_b_;
  std::vector<ParamRefT<S>> params_;
  // grid size -> interpolation matrix [g*g, G*G], built on demand
  mutable std::map<int, TensorT<S>> interp_cache_;
};

using ViT = ViTT<Real>;

// out[k] = momentum * teacher[k] + (1 - momentum) * student[k]; key sets and
// shapes must match exactly.
template <class S>
void ema_update(std::vector<ParamRefT<S>>& teacher,
                const std::vector<ParamRefT<S>>& student, double momentum);

// Checkpoint plumbing: model parameters plus arbitrary extra tensors (e.g.
// optimizer moments) under one directory, config and meta in the header.
std::vector<ParamEntry> param_entries(std::vector<ParamRef>& refs);

void save_encoder_checkpoint(const fs::path& dir, const ViT& model,
                             std::vector<ParamEntry> extra_tensors = {},
                             nlohmann::json meta = nlohmann::json::object());
// Loads into an already-constructed model; header config must match the
// model's config field-for-field.
nlohmann::json load_encoder_checkpoint(const fs::path& dir, ViT& model,
                                       std::vector<ParamEntry> extra_tensors = {});
// Reads just the header (config + meta) without touching tensors.
nlohmann::json peek_checkpoint_meta(const fs::path& dir);

}  // namespace hpl
