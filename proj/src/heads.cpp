#include "hpl/heads.hpp"

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

void HeadConfig::validate() const {
  if (n_prototypes < 2) throw ParamError("head config: need at least 2 prototypes");
  if (student_temp <= 0 || teacher_temp <= 0)
    throw ParamError("head config: temperatures must be positive");
  if (bottleneck_dim <= 0) throw ParamError("head config: bottleneck_dim must be positive");
  for (int h : hidden_dims)
    if (h <= 0) throw ParamError("head config: hidden dims must be positive");
}

template <class S>
ProjectionHeadT<S>::ProjectionHeadT(int in_dim, const HeadConfig& cfg, uint64_t seed,
                                    const std::string& name_prefix)
    : cfg_(cfg) {
  cfg_.validate();
  if (in_dim <= 0) throw ParamError("head: in_dim must be positive");
  const Rng root(mix_seed({0x68656164ULL, seed}));
  uint64_t stream = 0;
  std::vector<long> dims;
  dims.push_back(in_dim);
  for (int h : cfg_.hidden_dims) dims.push_back(h);
  dims.push_back(cfg_.bottleneck_dim);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    Rng r = root.split(stream++);
    ws_.push_back(ag::make_var(TensorT<S>::randn({dims[i + 1], dims[i]}, r, 0.02), true));
    bs_.push_back(ag::make_var(TensorT<S>::full({dims[i + 1]}, S(0)), true));
    const std::string layer = name_prefix + ".mlp." + std::to_string(i);
    params_.push_back({layer + ".weight", ws_.back()});
    params_.push_back({layer + ".bias", bs_.back()});
  }
  Rng r = root.split(stream++);
  proto_w_ = ag::make_var(TensorT<S>::randn({cfg_.n_prototypes, cfg_.bottleneck_dim}, r, 0.02),
                          true);
  params_.push_back({name_prefix + ".prototypes.weight", proto_w_});
}

template <class S>
ag::VarT<S> ProjectionHeadT<S>::logits(const ag::VarT<S>& x) const {
  ag::VarT<S> h = x;
  for (size_t i = 0; i < ws_.size(); ++i) {
    h = ag::linear(h, ws_[i], bs_[i]);
    if (i + 1 < ws_.size()) h = ag::gelu(h);
  }
  h = ag::l2_normalize_rows(h);
  // Weight-normalized prototype layer: direction-only rows, unit magnitude.
  return ag::matmul(h, ag::l2_normalize_rows(proto_w_), false, true);
}

template <class S>
ag::VarT<S> ProjectionHeadT<S>::forward(const ag::VarT<S>& x, double temp) const {
  if (temp <= 0) throw ParamError("head forward: temperature must be positive");
  return ag::log_softmax_rows(ag::scale(logits(x), static_cast<S>(1.0 / temp)));
}

template <class S>
void ProjectionHeadT<S>::set_trainable(bool on) {
  for (auto& p : params_) p.var->requires_grad = on;
}

template class ProjectionHeadT<float>;
template class ProjectionHeadT<double>;

}  // namespace hpl
