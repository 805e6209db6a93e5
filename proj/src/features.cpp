#include "hpl/features.hpp"

#include <cmath>

#include "hpl/errors.hpp"

namespace hpl {

bool FeatureSet::fully_labeled() const {
  if (labels.size() != ids.size() || ids.empty()) return false;
  for (int l : labels)
    if (l < 0) return false;
  return true;
}

void FeatureSet::validate() const {
  const long N = n();
  if (X.rows() != N)
    throw DataError("feature set: " + std::to_string(N) + " ids but " +
                    std::to_string(X.rows()) + " embedding rows");
  if (!labels.empty() && static_cast<long>(labels.size()) != N)
    throw DataError("feature set: label count does not match ids");
  if (!subgroups.empty() && static_cast<long>(subgroups.size()) != N)
    throw DataError("feature set: subgroup count does not match ids");
  for (long i = 0; i < X.numel(); ++i)
    if (!std::isfinite(X[i]))
      throw NumericError("feature set: non-finite embedding entry at index " +
                         std::to_string(i));
}

std::string params_sha256(const std::vector<ParamRef>& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size());
    h.update(p.var->val.ptr(), p.var->val.numel() * sizeof(Real));
  }
  return h.hex_digest();
}

ViT load_eval_encoder(const fs::path& checkpoint_dir, const std::string& tower) {
  if (tower != "teacher" && tower != "student")
    throw ParamError("load_eval_encoder: unknown tower '" + tower + "'");
  const nlohmann::json meta = Checkpoint::peek_meta(checkpoint_dir);
  if (meta.value("kind", "") != "pretrain" || !meta.contains("config"))
    throw DataError("checkpoint " + checkpoint_dir.string() +
                    " is not a pretraining run");
  const ViTConfig cfg = vit_config_from_json(meta.at("config").at("vit"));
  ViT model(cfg, 0);
  std::vector<ParamEntry> entries;
  for (auto& p : model.parameters())
    entries.push_back({tower + "." + p.name, &p.var->val});
  Checkpoint::load(checkpoint_dir, entries);
  model.set_trainable(false);
  return model;
}

FeatureSet extract_features(const ViT& model, const CorpusManifest& corpus,
                            const std::string& split) {
  const auto records = corpus.split_records(split);
  if (records.empty())
    throw ParamError("extract_features: split '" + split + "' is empty");
  const int size = model.config().image_size;
  const long D = model.config().dim;

  FeatureSet out;
  out.X = Tensor({static_cast<long>(records.size()), D});
  out.labels.reserve(records.size());
  out.subgroups.reserve(records.size());
  for (const SampleRecord* rec : records) {
    out.ids.push_back(rec->sample_id);
    out.labels.push_back(rec->label_ids.empty() ? -1 : rec->label_ids.front());
    out.subgroups.push_back(rec->subgroup);
  }

  // Fixed batching keeps the arithmetic identical across calls regardless of
  // how much memory is free.
  constexpr long kBatch = 32;
  ag::NoGradGuard ng;
  for (size_t b0 = 0; b0 < records.size(); b0 += kBatch) {
    const size_t b1 = std::min(records.size(), b0 + kBatch);
    std::vector<ImageF> batch;
    batch.reserve(b1 - b0);
    for (size_t i = b0; i < b1; ++i) {
      ImageF img = load_sample_image(corpus, *records[i]);
      if (img.h != size || img.w != size) img = resize_bilinear(img, size, size);
      batch.push_back(std::move(img));
    }
    const auto enc = model.encode_images(batch);
    std::copy_n(enc.cls->val.ptr(), (b1 - b0) * D, out.X.ptr() + b0 * D);
  }
  out.validate();
  return out;
}

FeatureSet extract_features(const fs::path& checkpoint_dir,
                            const CorpusManifest& corpus, const std::string& split) {
  const ViT model = load_eval_encoder(checkpoint_dir);
  return extract_features(model, corpus, split);
}

}  // namespace hpl
