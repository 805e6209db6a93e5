#pragma once

#include <string>
#include <vector>

#include "hpl/dataset.hpp"
#include "hpl/tensor.hpp"
#include "hpl/vit.hpp"

namespace hpl {

// Frozen-backbone cls embeddings for one corpus split plus the per-sample
// metadata the evaluators need. labels[i] is -1 for unlabeled samples;
// subgroups[i] may be empty.
struct FeatureSet {
  std::vector<std::string> ids;
  Tensor X;  // [N, D]
  std::vector<int> labels;
  std::vector<std::string> subgroups;

  long n() const { return static_cast<long>(ids.size()); }
  long dim() const { return X.numel() == 0 ? 0 : X.cols(); }
  bool fully_labeled() const;

  // Consistent lengths, finite embeddings.
  void validate() const;
};

// SHA-256 over the raw bytes of all tensors in registration order; the
// frozen-parameter contract checks compare these before and after training.
std::string params_sha256(const std::vector<ParamRef>& params);

// Rebuilds the evaluation encoder from a pretraining checkpoint directory.
// The EMA teacher tower is the published model; pass "student" to inspect
// the other tower.
ViT load_eval_encoder(const fs::path& checkpoint_dir,
                      const std::string& tower = "teacher");

// One cls embedding per image of the split: plain bilinear resize to the
// encoder resolution, no augmentation, fixed batch size. Output order follows
// the split's manifest order, so repeated calls are identical.
FeatureSet extract_features(const ViT& model, const CorpusManifest& corpus,
                            const std::string& split);
FeatureSet extract_features(const fs::path& checkpoint_dir,
                            const CorpusManifest& corpus, const std::string& split);

}  // namespace hpl
