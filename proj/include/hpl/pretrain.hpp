#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hpl/augment.hpp"
#include "hpl/dataset.hpp"
#include "hpl/heads.hpp"
#include "hpl/losses.hpp"
#include "hpl/vit.hpp"

namespace hpl {

struct TeacherTempSchedule {
  double start = 0.04;
  double end = 0.07;
  int warmup_epochs = 30;  // linear ramp; constant at `end` afterwards
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  // <= 0 derives the reference rule base_lr = 2e-3 * batch_size / 2048;
  // small-corpus runs usually pin an explicit value instead.
  double base_lr = 0.0;
  double final_lr = 1e-6;
  double warmup_fraction = 0.1;  // fraction of total steps spent ramping up
  double weight_decay = 0.04;
  std::string optimizer = "adamw";
  std::pair<double, double> momentum_schedule = {0.992, 1.0};
  TeacherTempSchedule teacher_temp;
  uint64_t seed = 0;

  void validate() const;
  double resolved_base_lr() const;
};

struct PretrainOptions {
  ViTConfig vit;
  HeadConfig head;
  LossWeights loss_weights;
  CropConfig crops;
  MaskConfig mask;
  TrainConfig train;
  double merge_threshold = 0.95;  // label merge cosine threshold
  int sinkhorn_iters = 3;

  void validate() const;
};

struct EpochStats {
  double image = 0, patch = 0, koleo = 0, sup = 0, total = 0;
  long steps = 0;
};

struct PretrainResult {
  fs::path checkpoint_dir;
  fs::path log_path;
  std::vector<EpochStats> epoch_means;
  long total_steps = 0;
  std::vector<std::string> canonical_labels;
};

// Hybrid self-supervised + prototype-supervised training over `split` of the
// corpus. Writes a JSON-lines step log and a final-epoch checkpoint (both
// towers, heads, prototype matrix, optimizer state) under out_dir. Passing
// resume_from continues a run from its saved epoch counter; the stateless
// per-(epoch, image) RNG streams make the continuation replay exactly.
PretrainResult pretrain(const CorpusManifest& corpus, const std::string& split,
                        const PretrainOptions& opt, const fs::path& out_dir,
                        const fs::path& resume_from = {});

}  // namespace hpl
