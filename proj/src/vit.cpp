#include "hpl/vit.hpp"

#include <cmath>

#include "hpl/errors.hpp"

namespace hpl {

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || dim <= 0 || depth <= 0 || heads <= 0)
    throw ParamError("vit config: all sizes must be positive");
  if (image_size % patch_size != 0)
    throw ParamError("vit config: image_size " + std::to_string(image_size) +
                     " not divisible by patch_size " + std::to_string(patch_size));
  if (dim % heads != 0)
    throw ParamError("vit config: dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  if (mlp_ratio <= 0) throw ParamError("vit config: mlp_ratio must be positive");
}

long ViTConfig::n_patches(int crop_size) const {
  if (crop_size <= 0 || crop_size % patch_size != 0)
    throw ParamError("crop size " + std::to_string(crop_size) +
                     " not divisible by patch size " + std::to_string(patch_size));
  const long g = crop_size / patch_size;
  return g * g;
}

nlohmann::json vit_config_json(const ViTConfig& cfg) {
  return {{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
          {"dim", cfg.dim},               {"depth", cfg.depth},
          {"heads", cfg.heads},           {"mlp_ratio", cfg.mlp_ratio}};
}

ViTConfig vit_config_from_json(const nlohmann::json& j) {
  ViTConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.dim = j.at("dim").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  cfg.validate();
  return cfg;
}

template <class S>
TensorT<S> patchify(const std::vector<ImageF>& crops, int patch_size) {
  if (crops.empty()) throw ParamError("patchify: empty batch");
  const long size = crops[0].h;
  if (crops[0].w != size || crops[0].c != 3)
    throw ParamError("patchify: crops must be square RGB");
  if (size % patch_size != 0)
    throw ParamError("patchify: crop size not divisible by patch size");
  const long g = size / patch_size;
  const long N = g * g;
  const long row_w = 3L * patch_size * patch_size;
  TensorT<S> out({static_cast<long>(crops.size()) * N, row_w});
  for (size_t b = 0; b < crops.size(); ++b) {
    const ImageF& im = crops[b];
    if (im.h != size || im.w != size || im.c != 3)
      throw ParamError("patchify: crop sizes differ within batch");
    for (long gy = 0; gy < g; ++gy)
      for (long gx = 0; gx < g; ++gx) {
        S* row = out.ptr() + (b * N + gy * g + gx) * row_w;
        long k = 0;
        for (long dy = 0; dy < patch_size; ++dy)
          for (long dx = 0; dx < patch_size; ++dx)
            for (long c = 0; c < 3; ++c)
              row[k++] = static_cast<S>(
                  (im.at(gy * patch_size + dy, gx * patch_size + dx, c) - 0.5f) / 0.25f);
      }
  }
  return out;
}

template <class S>
ViTT<S>::ViTT(const ViTConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  const long D = cfg_.dim;
  const long P = cfg_.patch_size;
  const long G = cfg_.grid();
  const long hidden = static_cast<long>(std::lround(cfg_.mlp_ratio * D));
  const Rng root(mix_seed({0x766974696e6974ULL, init_seed}));
  uint64_t stream = 0;
  auto randn = [&](std::vector<long> shape, double stddev) {
    Rng r = root.split(stream++);
    return ag::make_var(TensorT<S>::randn(std::move(shape), r, stddev), true);
  };
  auto fill = [&](std::vector<long> shape, S v) {
    return ag::make_var(TensorT<S>::full(std::move(shape), v), true);
  };
  constexpr double kStd = 0.02;

  patch_w_ = randn({D, 3 * P * P}, kStd);
  patch_b_ = fill({D}, S(0));
  cls_tok_ = randn({1, D}, kStd);
  mask_tok_ = randn({1, D}, kStd);
  pos_ = randn({1 + G * G, D}, kStd);
  params_ = {{"patch_embed.weight", patch_w_},
             {"patch_embed.bias", patch_b_},
             {"cls_token", cls_tok_},
             {"mask_token", mask_tok_},
             {"pos_embed", pos_}};
  blocks_.resize(cfg_.depth);
  for (int i = 0; i < cfg_.depth; ++i) {
    ViTBlockT<S>& blk = blocks_[i];
    blk.ln1_g = fill({D}, S(1));
    blk.ln1_b = fill({D}, S(0));
    blk.qkv_w = randn({3 * D, D}, kStd);
    blk.qkv_b = fill({3 * D}, S(0));
    blk.proj_w = randn({D, D}, kStd);
    blk.proj_b = fill({D}, S(0));
    blk.ln2_g = fill({D}, S(1));
    blk.ln2_b = fill({D}, S(0));
    blk.fc1_w = randn({hidden, D}, kStd);
    blk.fc1_b = fill({hidden}, S(0));
    blk.fc2_w = randn({D, hidden}, kStd);
    blk.fc2_b = fill({D}, S(0));
    const std::string p = "blocks." + std::to_string(i) + ".";
    params_.push_back({p + "ln1.gamma", blk.ln1_g});
    params_.push_back({p + "ln1.beta", blk.ln1_b});
    params_.push_back({p + "attn.qkv.weight", blk.qkv_w});
    params_.push_back({p + "attn.qkv.bias", blk.qkv_b});
    params_.push_back({p + "attn.proj.weight", blk.proj_w});
    params_.push_back({p + "attn.proj.bias", blk.proj_b});
    params_.push_back({p + "ln2.gamma", blk.ln2_g});
    params_.push_back({p + "ln2.beta", blk.ln2_b});
    params_.push_back({p + "mlp.fc1.weight", blk.fc1_w});
    params_.push_back({p + "mlp.fc1.bias", blk.fc1_b});
    params_.push_back({p + "mlp.fc2.weight", blk.fc2_w});
    params_.push_back({p + "mlp.fc2.bias", blk.fc2_b});
  }
  lnf_g_ = fill({D}, S(1));
  lnf_b_ = fill({D}, S(0));
  params_.push_back({"norm.gamma", lnf_g_});
  params_.push_back({"norm.beta", lnf_b_});
}

template <class S>
void ViTT<S>::set_trainable(bool on) {
  for (auto& p : params_) p.var->requires_grad = on;
}

template <class S>
ag::VarT<S> ViTT<S>::positional_rows(int grid) const {
  const long G = cfg_.grid();
  if (grid == G) return pos_;
  const long g = grid;
  auto it = interp_cache_.find(grid);
  if (it == interp_cache_.end()) {
    // Bilinear interpolation matrix from the G×G table grid to g×g, corner
    // aligned so the grid corners map onto each other.
    TensorT<S> M({g * g, G * G});
    for (long ty = 0; ty < g; ++ty) {
      const double sy = g > 1 ? double(ty) * (G - 1) / (g - 1) : (G - 1) / 2.0;
      const long y0 = std::min<long>(static_cast<long>(sy), G - 2 >= 0 ? G - 2 : 0);
      const double fy = sy - y0;
      for (long tx = 0; tx < g; ++tx) {
        const double sx = g > 1 ? double(tx) * (G - 1) / (g - 1) : (G - 1) / 2.0;
        const long x0 = std::min<long>(static_cast<long>(sx), G - 2 >= 0 ? G - 2 : 0);
        const double fx = sx - x0;
        S* row = M.ptr() + (ty * g + tx) * G * G;
        row[y0 * G + x0] += static_cast<S>((1 - fy) * (1 - fx));
        row[y0 * G + std::min(x0 + 1, G - 1)] += static_cast<S>((1 - fy) * fx);
        row[std::min(y0 + 1, G - 1) * G + x0] += static_cast<S>(fy * (1 - fx));
        row[std::min(y0 + 1, G - 1) * G + std::min(x0 + 1, G - 1)] +=
            static_cast<S>(fy * fx);
      }
    }
    it = interp_cache_.emplace(grid, std::move(M)).first;
  }
  IndexVec grid_idx(G * G);
  for (long i = 0; i < G * G; ++i) grid_idx[i] = i + 1;
  auto grid_rows = ag::select_rows(pos_, std::move(grid_idx));
  auto interp = ag::matmul(ag::constant(it->second), grid_rows);
  auto cls_row = ag::select_rows(pos_, IndexVec{0});
  return ag::concat_rows<S>({cls_row, interp});
}

template <class S>
typename ViTT<S>::Output ViTT<S>::encode(const TensorT<S>& patch_pixels, long batch,
                                         int crop_size, std::shared_ptr<ByteTensor> mask,
                                         bool want_layers) const {
  const long D = cfg_.dim;
  const long P = cfg_.patch_size;
  const long N = cfg_.n_patches(crop_size);
  const long T = N + 1;
  const long H = cfg_.heads;
  const long dh = D / H;
  if (patch_pixels.rows() != batch * N || patch_pixels.cols() != 3 * P * P)
    throw ParamError("encode: patch matrix is " + patch_pixels.shape_str() +
                     ", expected [" + std::to_string(batch * N) + ", " +
                     std::to_string(3 * P * P) + "]");
  if (mask && mask->numel() != batch * N)
    throw ParamError("encode: mask length " + std::to_string(mask->numel()) +
                     " != patch count " + std::to_string(batch * N));

  auto tok = ag::linear(ag::constant(patch_pixels), patch_w_, patch_b_);
  if (mask) tok = ag::mask_token_fill(tok, mask, mask_tok_);
  auto seq = ag::reshape(ag::prepend_token(tok, cls_tok_, batch, N), {batch * T, D});
  seq = ag::add_tiled(seq, positional_rows(crop_size / P), T);

  Output out;
  out.batch = batch;
  out.tokens = N;
  const S att_scale = static_cast<S>(1.0 / std::sqrt(double(dh)));
  for (const auto& blk : blocks_) {
    auto h = ag::layer_norm(seq, blk.ln1_g, blk.ln1_b);
    auto qkv = ag::linear(h, blk.qkv_w, blk.qkv_b);
    auto qh = ag::split_heads(ag::slice_cols(qkv, 0, D), batch, T, H);
    auto kh = ag::split_heads(ag::slice_cols(qkv, D, D), batch, T, H);
    auto vh = ag::split_heads(ag::slice_cols(qkv, 2 * D, D), batch, T, H);
    auto att = ag::softmax_rows(ag::scale(ag::bmm(qh, kh, false, true), att_scale));
    auto ctx = ag::merge_heads(ag::bmm(att, vh), batch, T, H);
    seq = ag::add(seq, ag::linear(ctx, blk.proj_w, blk.proj_b));
    auto f = ag::linear(ag::gelu(ag::linear(ag::layer_norm(seq, blk.ln2_g, blk.ln2_b),
                                            blk.fc1_w, blk.fc1_b)),
                        blk.fc2_w, blk.fc2_b);
    seq = ag::add(seq, f);
    if (want_layers) out.layers.push_back(seq);
  }
  seq = ag::layer_norm(seq, lnf_g_, lnf_b_);

  IndexVec cls_idx(batch), patch_idx(batch * N);
  for (long b = 0; b < batch; ++b) {
    cls_idx[b] = b * T;
    for (long t = 0; t < N; ++t) patch_idx[b * N + t] = b * T + 1 + t;
  }
  out.cls = ag::select_rows(seq, std::move(cls_idx));
  out.patches = ag::select_rows(seq, std::move(patch_idx));
  return out;
}

template <class S>
typename ViTT<S>::Output ViTT<S>::encode_images(const std::vector<ImageF>& crops,
                                                std::shared_ptr<ByteTensor> mask,
                                                bool want_layers) const {
  if (crops.empty()) throw ParamError("encode_images: empty batch");
  return encode(patchify<S>(crops, cfg_.patch_size), static_cast<long>(crops.size()),
                static_cast<int>(crops[0].h), std::move(mask), want_layers);
}

template <class S>
void ema_update(std::vector<ParamRefT<S>>& teacher,
                const std::vector<ParamRefT<S>>& student, double momentum) {
  if (momentum < 0.0 || momentum > 1.0)
    throw ParamError("ema_update: momentum must lie in [0, 1]");
  if (teacher.size() != student.size())
    throw ParamError("ema_update: parameter count mismatch");
  for (size_t i = 0; i < teacher.size(); ++i) {
    auto& t = teacher[i];
    const auto& s = student[i];
    if (t.name != s.name)
      throw ParamError("ema_update: key mismatch '" + t.name + "' vs '" + s.name + "'");
    if (!t.var->val.same_shape(s.var->val))
      throw ParamError("ema_update: shape mismatch for '" + t.name + "'");
    t.var->val.vec() = static_cast<S>(momentum) * t.var->val.vec() +
                       static_cast<S>(1.0 - momentum) * s.var->val.vec();
  }
}

std::vector<ParamEntry> param_entries(std::vector<ParamRef>& refs) {
  std::vector<ParamEntry> out;
  out.reserve(refs.size());
  for (auto& r : refs) out.push_back({r.name, &r.var->val});
  return out;
}

void save_encoder_checkpoint(const fs::path& dir, const ViT& model,
                             std::vector<ParamEntry> extra_tensors,
                             nlohmann::json meta) {
  auto& refs = const_cast<ViT&>(model).parameters();
  std::vector<ParamEntry> entries = param_entries(refs);
  entries.insert(entries.end(), extra_tensors.begin(), extra_tensors.end());
  meta["config"] = vit_config_json(model.config());
  Checkpoint::save(dir, entries, meta);
}

nlohmann::json load_encoder_checkpoint(const fs::path& dir, ViT& model,
                                       std::vector<ParamEntry> extra_tensors) {
  const nlohmann::json meta = Checkpoint::peek_meta(dir);
  if (!meta.contains("config"))
    throw DataError("checkpoint " + dir.string() + " has no encoder config");
  const nlohmann::json want = vit_config_json(model.config());
  const nlohmann::json& got = meta.at("config");
  for (const auto& [key, val] : want.items()) {
    if (!got.contains(key) || got.at(key) != val)
      throw DataError("checkpoint config mismatch on '" + key + "': checkpoint " +
                      (got.contains(key) ? got.at(key).dump() : "<absent>") +
                      " vs model " + val.dump());
  }
  std::vector<ParamEntry> entries = param_entries(model.parameters());
  entries.insert(entries.end(), extra_tensors.begin(), extra_tensors.end());
  Checkpoint::load(dir, entries);
  return meta;
}

nlohmann::json peek_checkpoint_meta(const fs::path& dir) {
  return Checkpoint::peek_meta(dir);
}

template TensorT<float> patchify<float>(const std::vector<ImageF>&, int);
template TensorT<double> patchify<double>(const std::vector<ImageF>&, int);
template class ViTT<float>;
template class ViTT<double>;
template void ema_update<float>(std::vector<ParamRefT<float>>&,
                                const std::vector<ParamRefT<float>>&, double);
template void ema_update<double>(std::vector<ParamRefT<double>>&,
                                 const std::vector<ParamRefT<double>>&, double);

}  // namespace hpl
