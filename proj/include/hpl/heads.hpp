#pragma once

#include <string>
#include <vector>

#include "hpl/autograd.hpp"
#include "hpl/vit.hpp"

namespace hpl {

struct HeadConfig {
  std::vector<int> hidden_dims = {256, 256};
  int bottleneck_dim = 64;
  int n_prototypes = 1024;   // K
  double student_temp = 0.1;
  double teacher_temp = 0.04;  // warmed by the training schedule

  void validate() const;
};

// Projection head: MLP over hidden_dims (GELU between layers) -> bottleneck
// -> L2-normalize -> weight-normalized linear onto K prototypes. The same
// shape serves the image-level head and the patch-level head.
template <class S>
class ProjectionHeadT {
 public:
  ProjectionHeadT(int in_dim, const HeadConfig& cfg, uint64_t seed,
                  const std::string& name_prefix);

  // Prototype logits in [-1, 1]-ish range (cosine against prototype rows).
  ag::VarT<S> logits(const ag::VarT<S>& x) const;
  // log-softmax(logits / temp): rows are log-probabilities over K.
  ag::VarT<S> forward(const ag::VarT<S>& x, double temp) const;

  std::vector<ParamRefT<S>>& parameters() { return params_; }
  const std::vector<ParamRefT<S>>& parameters() const { return params_; }
  void set_trainable(bool on);
  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  std::vector<ag::VarT<S>> ws_, bs_;  // MLP + bottleneck stack
  ag::VarT<S> proto_w_;               // [K, bottleneck]
  std::vector<ParamRefT<S>> params_;
};

using ProjectionHead = ProjectionHeadT<Real>;

}  // namespace hpl
