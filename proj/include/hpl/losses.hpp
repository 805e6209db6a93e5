#pragma once

#include <json.hpp>

#include "hpl/autograd.hpp"

namespace hpl {

struct LossWeights {
  double w_image = 1.0;
  double w_patch = 1.0;
  double w_koleo = 0.1;
  double w_sup = 1.0;

  void validate() const;
};

struct LossReport {
  double image_loss = 0, patch_loss = 0, koleo_loss = 0, sup_loss = 0, total = 0;

  nlohmann::json to_json() const;
};

// Teacher-side normalization. Starts from exp(logits/temp); each iteration
// scales columns to sum B/K then rows to sum 1, so the result ends row
// normalized. A single row degenerates to a plain softmax.
template <class S>
TensorT<S> sinkhorn_knopp(const TensorT<S>& logits, double temp, int n_iters);

// Image-level alignment: same-index global pairing plus every (teacher
// global, student local) pair, both scaled by 1/(N_g(1+N_l)). Pass a null
// student_local_logp when there are no local crops.
template <class S>
ag::VarT<S> image_level_loss(const ag::VarT<S>& student_global_logp,
                             const ag::VarT<S>& student_local_logp,
                             const TensorT<S>& teacher_global_p);

// Masked-patch alignment: per crop, teacher-weighted cross entropy averaged
// over the masked positions only, then averaged over crops. Returns zero when
// nothing is masked anywhere. Rows are ordered (crop, patch).
template <class S>
ag::VarT<S> patch_level_loss(const ag::VarT<S>& patch_student_logp,
                             const TensorT<S>& patch_teacher_p,
                             const ByteTensor& masks, long n_g, long n_p);

// Spreading regularizer: -(1/B) sum_i log(d_i + 1e-8) over L2-normalized
// rows, d_i the distance to the nearest other row.
template <class S>
ag::VarT<S> koleo_loss(const ag::VarT<S>& cls_embeddings);

// Prototype supervision: sigmoid(cls · Wᵀ) against binary targets y with
// ignore indicator n; per crop mean over the n=1 entries, averaged over crops.
template <class S>
ag::VarT<S> supervised_prototype_loss(const ag::VarT<S>& cls_global,
                                      const ag::VarT<S>& prototype_w,
                                      const TensorT<S>& y, const TensorT<S>& n);

// total = w_image·image + w_patch·patch + w_koleo·koleo + w_sup·sup. Null
// component vars count as zero. Fills `report` (components and exact total).
template <class S>
ag::VarT<S> hybrid_total_loss(const ag::VarT<S>& image, const ag::VarT<S>& patch,
                              const ag::VarT<S>& koleo, const ag::VarT<S>& sup,
                              const LossWeights& w, LossReport* report);

}  // namespace hpl
