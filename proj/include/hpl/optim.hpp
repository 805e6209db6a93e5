#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "hpl/serialize.hpp"
#include "hpl/vit.hpp"

namespace hpl {

// end + (start - end) * (1 + cos(pi * step / total_steps)) / 2, with step
// clamped to [0, total_steps]. Hits start at step 0 and end at the final
// step exactly.
double cosine_schedule(long step, long total_steps, double start, double end);

// Linear ramp to base_lr over the first warmup_steps (reaching base_lr on the
// last warmup step), then cosine decay to final_lr at step == total_steps.
double warmup_cosine_lr(long step, long total_steps, long warmup_steps,
                        double base_lr, double final_lr);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  void validate() const;
};

// AdamW with decoupled weight decay and per-group decay factors. The learning
// rate is passed to step() so schedules stay outside the optimizer.
template <class S>
class AdamWT {
 public:
  explicit AdamWT(AdamWConfig cfg = {});

  // All params in a group share one weight-decay factor. Parameter names must
  // be unique across groups (they key the serialized moment buffers).
  void add_group(const std::vector<ParamRefT<S>>& params, double weight_decay);

  // Standard split: decay on >=2-D ".weight" tensors, none on biases, norm
  // scales/shifts, and learned tokens.
  void add_model(const std::vector<ParamRefT<S>>& params, double weight_decay);

  size_t n_params() const { return slots_.size(); }
  long step_count() const { return t_; }

  void zero_grad();
  // One update from the gradients currently on the tape. Params whose grad
  // buffer is empty (never touched by backward) are left untouched except for
  // weight decay applied on the next step that does see them -- mirroring the
  // usual skip-if-no-grad convention.
  void step(double lr);

  // Moment buffers + step counter for exact training resume.
  std::vector<ParamEntry> state_entries()
    requires std::is_same_v<S, float>;
  nlohmann::json state_meta() const;
  void load_state_meta(const nlohmann::json& meta);

 private:
  struct Slot {
    std::string name;
    ag::VarT<S> var;
    double weight_decay;
    TensorT<S> m, v;
  };
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

using AdamW = AdamWT<Real>;

}  // namespace hpl
