#include "hpl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hpl/errors.hpp"

namespace hpl {

double cosine_schedule(long step, long total_steps, double start, double end) {
  if (total_steps < 1) throw ParamError("cosine_schedule: total_steps must be >= 1");
  if (step <= 0) return start;
  if (step >= total_steps) return end;
  const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
  return end + (start - end) * (1.0 + std::cos(phase)) / 2.0;
}

double warmup_cosine_lr(long step, long total_steps, long warmup_steps,
                        double base_lr, double final_lr) {
  if (total_steps < 1) throw ParamError("warmup_cosine_lr: total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ParamError("warmup_cosine_lr: warmup_steps must lie in [0, total_steps)");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return cosine_schedule(step - warmup_steps, total_steps - warmup_steps, base_lr, final_lr);
}

void AdamWConfig::validate() const {
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ParamError("adamw: betas must lie in [0, 1)");
  if (eps <= 0) throw ParamError("adamw: eps must be positive");
}

template <class S>
AdamWT<S>::AdamWT(AdamWConfig cfg) : cfg_(cfg) {
  cfg_.validate();
}

template <class S>
void AdamWT<S>::add_group(const std::vector<ParamRefT<S>>& params, double weight_decay) {
  if (weight_decay < 0) throw ParamError("adamw: negative weight decay");
  for (const auto& p : params) {
    for (const auto& s : slots_)
      if (s.name == p.name)
        throw ParamError("adamw: parameter '" + p.name + "' registered twice");
    Slot slot;
    slot.name = p.name;
    slot.var = p.var;
    slot.weight_decay = weight_decay;
    slot.m = TensorT<S>(p.var->val.shape());
    slot.v = TensorT<S>(p.var->val.shape());
    slots_.push_back(std::move(slot));
  }
}

template <class S>
void AdamWT<S>::add_model(const std::vector<ParamRefT<S>>& params, double weight_decay) {
  std::vector<ParamRefT<S>> decay, no_decay;
  for (const auto& p : params) {
    const bool is_weight = p.name.size() > 7 &&
                           p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
    if (is_weight && p.var->val.shape().size() >= 2)
      decay.push_back(p);
    else
      no_decay.push_back(p);
  }
  if (!decay.empty()) add_group(decay, weight_decay);
  if (!no_decay.empty()) add_group(no_decay, 0.0);
}

template <class S>
void AdamWT<S>::zero_grad() {
  for (auto& s : slots_) s.var->zero_grad();
}

template <class S>
void AdamWT<S>::step(double lr) {
  if (lr < 0) throw ParamError("adamw: negative learning rate");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
  for (auto& s : slots_) {
    if (s.var->grad.numel() == 0) continue;
    auto p = s.var->val.vec();
    auto g = s.var->grad.vec();
    auto m = s.m.vec();
    auto v = s.v.vec();
    m.array() = b1 * m.array() + (S(1) - b1) * g.array();
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    // Decoupled decay, then the bias-corrected Adam direction.
    if (s.weight_decay > 0) p *= S(1) - static_cast<S>(lr * s.weight_decay);
    p.array() -= static_cast<S>(lr) * ((m.array() / static_cast<S>(bc1)) /
                                       ((v.array() / static_cast<S>(bc2)).sqrt() +
                                        static_cast<S>(cfg_.eps)));
  }
}

template <class S>
std::vector<ParamEntry> AdamWT<S>::state_entries()
  requires std::is_same_v<S, float>
{
  std::vector<ParamEntry> out;
  out.reserve(slots_.size() * 2);
  for (auto& s : slots_) {
    out.push_back({"opt." + s.name + ".m", &s.m});
    out.push_back({"opt." + s.name + ".v", &s.v});
  }
  return out;
}

template <class S>
nlohmann::json AdamWT<S>::state_meta() const {
  return {{"adamw_step", t_},
          {"beta1", cfg_.beta1},
          {"beta2", cfg_.beta2},
          {"eps", cfg_.eps}};
}

template <class S>
void AdamWT<S>::load_state_meta(const nlohmann::json& meta) {
  t_ = meta.at("adamw_step").get<long>();
}

template class AdamWT<float>;
template class AdamWT<double>;

}  // namespace hpl
