#include "hpl/losses.hpp"

#include <cmath>

#include "hpl/errors.hpp"

namespace hpl {

void LossWeights::validate() const {
  if (w_image < 0 || w_patch < 0 || w_koleo < 0 || w_sup < 0)
    throw ParamError("loss weights must be non-negative");
  if (w_image == 0 && w_patch == 0 && w_koleo == 0 && w_sup == 0)
    throw ParamError("at least one loss weight must be positive");
}

nlohmann::json LossReport::to_json() const {
  return {{"image", image_loss}, {"patch", patch_loss}, {"koleo", koleo_loss},
          {"sup", sup_loss},     {"total", total}};
}

namespace {

template <class S>
void check_teacher_rows(const TensorT<S>& p, const ByteTensor* row_mask) {
  const long R = p.rows(), C = p.cols();
  for (long r = 0; r < R; ++r) {
    if (row_mask && !(*row_mask)[r]) continue;
    double s = 0;
    for (long c = 0; c < C; ++c) s += p[r * C + c];
    if (std::fabs(s - 1.0) > 1e-6)
      throw NumericError("teacher row " + std::to_string(r) + " sums to " +
                         std::to_string(s) + ", expected 1");
  }
}

}  // namespace

template <class S>
TensorT<S> sinkhorn_knopp(const TensorT<S>& logits, double temp, int n_iters) {
  const long B = logits.rows(), K = logits.cols();
  if (B < 1 || K < 1) throw ParamError("sinkhorn: empty score matrix");
  if (temp <= 0) throw ParamError("sinkhorn: temperature must be positive");
  if (n_iters < 1) throw ParamError("sinkhorn: need at least one iteration");
  if (!logits.all_finite()) throw NumericError("sinkhorn: non-finite logits");

  // Scaled scores, stabilized against the global maximum.
  std::vector<double> q(static_cast<size_t>(B) * K);
  double mx = -std::numeric_limits<double>::infinity();
  for (long i = 0; i < B * K; ++i) mx = std::max(mx, static_cast<double>(logits[i]) / temp);
  for (long i = 0; i < B * K; ++i) q[i] = std::exp(static_cast<double>(logits[i]) / temp - mx);

  TensorT<S> out({B, K});
  if (B == 1) {
    // The column step would flatten a single row to uniform; a lone row is
    // just a softmax.
    double s = 0;
    for (long k = 0; k < K; ++k) s += q[k];
    for (long k = 0; k < K; ++k) out[k] = static_cast<S>(q[k] / s);
    return out;
  }

  constexpr double kTiny = 1e-300;
  for (int it = 0; it < n_iters; ++it) {
    for (long k = 0; k < K; ++k) {
      double col = 0;
      for (long b = 0; b < B; ++b) col += q[b * K + k];
      const double scale = (static_cast<double>(B) / K) / std::max(col, kTiny);
      for (long b = 0; b < B; ++b) q[b * K + k] *= scale;
    }
    for (long b = 0; b < B; ++b) {
      double row = 0;
      for (long k = 0; k < K; ++k) row += q[b * K + k];
      const double inv = 1.0 / std::max(row, kTiny);
      for (long k = 0; k < K; ++k) q[b * K + k] *= inv;
    }
  }
  for (long i = 0; i < B * K; ++i) out[i] = static_cast<S>(q[i]);
  return out;
}

template <class S>
ag::VarT<S> image_level_loss(const ag::VarT<S>& student_global_logp,
                             const ag::VarT<S>& student_local_logp,
                             const TensorT<S>& teacher_global_p) {
  if (!student_global_logp) throw ParamError("image loss: missing student globals");
  const long Ng = student_global_logp->val.rows();
  const long K = student_global_logp->val.cols();
  if (teacher_global_p.rows() != Ng || teacher_global_p.cols() != K)
    throw ParamError("image loss: teacher shape " + teacher_global_p.shape_str() +
                     " vs student " + student_global_logp->val.shape_str());
  check_teacher_rows(teacher_global_p, nullptr);
  const long Nl = student_local_logp ? student_local_logp->val.rows() : 0;
  if (Nl > 0 && student_local_logp->val.cols() != K)
    throw ParamError("image loss: local prototype count mismatch");

  const double norm = 1.0 / (Ng * (1.0 + Nl));
  auto qg = std::make_shared<TensorT<S>>(teacher_global_p);
  auto wg = std::make_shared<TensorT<S>>(TensorT<S>::full({Ng}, static_cast<S>(norm)));
  auto global_term = ag::soft_ce_rows(student_global_logp, qg, wg);
  if (Nl == 0) return global_term;

  // Every local crop pairs with every teacher global: fold the teacher sum
  // into one row repeated per local crop.
  TensorT<S> summed({Nl, K});
  for (long k = 0; k < K; ++k) {
    double s = 0;
    for (long m = 0; m < Ng; ++m) s += teacher_global_p[m * K + k];
    for (long n = 0; n < Nl; ++n) summed[n * K + k] = static_cast<S>(s);
  }
  auto ql = std::make_shared<TensorT<S>>(std::move(summed));
  auto wl = std::make_shared<TensorT<S>>(TensorT<S>::full({Nl}, static_cast<S>(norm)));
  return ag::add(global_term, ag::soft_ce_rows(student_local_logp, ql, wl));
}

template <class S>
ag::VarT<S> patch_level_loss(const ag::VarT<S>& patch_student_logp,
                             const TensorT<S>& patch_teacher_p,
                             const ByteTensor& masks, long n_g, long n_p) {
  const long R = n_g * n_p;
  if (!patch_student_logp) throw ParamError("patch loss: missing student scores");
  const long K = patch_student_logp->val.cols();
  if (patch_student_logp->val.rows() != R)
    throw ParamError("patch loss: student rows " +
                     std::to_string(patch_student_logp->val.rows()) + " != N_g*N_p " +
                     std::to_string(R));
  if (patch_teacher_p.rows() != R || patch_teacher_p.cols() != K)
    throw ParamError("patch loss: teacher shape mismatch");
  if (masks.numel() != R) throw ParamError("patch loss: mask shape mismatch");

  check_teacher_rows(patch_teacher_p, &masks);

  auto w = std::make_shared<TensorT<S>>(TensorT<S>({R}));
  bool any = false;
  for (long i = 0; i < n_g; ++i) {
    double denom = 0;
    for (long j = 0; j < n_p; ++j) denom += masks[i * n_p + j] ? 1.0 : 0.0;
    if (denom == 0) continue;
    any = true;
    for (long j = 0; j < n_p; ++j)
      (*w)[i * n_p + j] = masks[i * n_p + j] ? static_cast<S>(1.0 / (n_g * denom)) : S(0);
  }
  if (!any) return ag::make_var(TensorT<S>::scalar(S(0)));
  auto q = std::make_shared<TensorT<S>>(patch_teacher_p);
  return ag::soft_ce_rows(patch_student_logp, q, w);
}

template <class S>
ag::VarT<S> koleo_loss(const ag::VarT<S>& cls_embeddings) {
  return ag::koleo_core(ag::l2_normalize_rows(cls_embeddings), 1e-8);
}

template <class S>
ag::VarT<S> supervised_prototype_loss(const ag::VarT<S>& cls_global,
                                      const ag::VarT<S>& prototype_w,
                                      const TensorT<S>& y, const TensorT<S>& n) {
  const long Ng = cls_global->val.rows(), D = cls_global->val.cols();
  const long Nc = prototype_w->val.rows();
  if (prototype_w->val.cols() != D)
    throw ParamError("supervised loss: prototype width " +
                     std::to_string(prototype_w->val.cols()) + " vs feature dim " +
                     std::to_string(D));
  if (y.rows() != Ng || y.cols() != Nc || n.rows() != Ng || n.cols() != Nc)
    throw ParamError("supervised loss: target/indicator shape mismatch");
  auto z = ag::matmul(cls_global, prototype_w, false, true);
  return ag::masked_bce_logits(z, std::make_shared<TensorT<S>>(y),
                               std::make_shared<TensorT<S>>(n));
}

template <class S>
ag::VarT<S> hybrid_total_loss(const ag::VarT<S>& image, const ag::VarT<S>& patch,
                              const ag::VarT<S>& koleo, const ag::VarT<S>& sup,
                              const LossWeights& w, LossReport* report) {
  w.validate();
  auto component = [](const ag::VarT<S>& v) {
    return v ? v : ag::make_var(TensorT<S>::scalar(S(0)));
  };
  auto img_v = component(image), patch_v = component(patch);
  auto koleo_v = component(koleo), sup_v = component(sup);
  auto total = ag::add(
      ag::add(ag::scale(img_v, static_cast<S>(w.w_image)),
              ag::scale(patch_v, static_cast<S>(w.w_patch))),
      ag::add(ag::scale(koleo_v, static_cast<S>(w.w_koleo)),
              ag::scale(sup_v, static_cast<S>(w.w_sup))));
  if (report) {
    report->image_loss = img_v->val.item();
    report->patch_loss = patch_v->val.item();
    report->koleo_loss = koleo_v->val.item();
    report->sup_loss = sup_v->val.item();
    report->total = w.w_image * report->image_loss + w.w_patch * report->patch_loss +
                    w.w_koleo * report->koleo_loss + w.w_sup * report->sup_loss;
  }
  return total;
}

#define HPL_INSTANTIATE_LOSSES(S)                                                      \
  template TensorT<S> sinkhorn_knopp<S>(const TensorT<S>&, double, int);               \
  template ag::VarT<S> image_level_loss<S>(const ag::VarT<S>&, const ag::VarT<S>&,     \
                                           const TensorT<S>&);                         \
  template ag::VarT<S> patch_level_loss<S>(const ag::VarT<S>&, const TensorT<S>&,      \
                                           const ByteTensor&, long, long);             \
  template ag::VarT<S> koleo_loss<S>(const ag::VarT<S>&);                              \
  template ag::VarT<S> supervised_prototype_loss<S>(const ag::VarT<S>&,                \
                                                    const ag::VarT<S>&,                \
                                                    const TensorT<S>&,                 \
                                                    const TensorT<S>&);                \
  template ag::VarT<S> hybrid_total_loss<S>(const ag::VarT<S>&, const ag::VarT<S>&,    \
                                            const ag::VarT<S>&, const ag::VarT<S>&,    \
                                            const LossWeights&, LossReport*);

HPL_INSTANTIATE_LOSSES(float)
HPL_INSTANTIATE_LOSSES(double)

#undef HPL_INSTANTIATE_LOSSES

}  // namespace hpl
