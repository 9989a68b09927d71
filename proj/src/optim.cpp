#include "scafds/optim.hpp"

#include <cmath>
#include <numbers>

namespace scafds::num {

AdamW::AdamW(OptimConfig cfg, std::vector<Var> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (cfg_.cosine && cfg_.total_steps <= 0)
    throw ConfigError("AdamW: cosine schedule requires total_steps > 0");
  if (!(cfg_.lr > 0.0)) throw ConfigError("AdamW: lr must be positive");
  for (Var p : params_) {
    if (p.owner == nullptr) throw StateError("AdamW: unbound parameter handle");
    const auto& t = p.owner->at(p);
    if (!t.requires_grad) throw StateError("AdamW: parameter does not require grad");
    m_.emplace_back(t.values.size(), 0.0);
    v_.emplace_back(t.values.size(), 0.0);
  }
}

double AdamW::current_lr() const {
  if (!cfg_.cosine) return cfg_.lr;
  const double frac =
      std::min(1.0, static_cast<double>(t_) / static_cast<double>(cfg_.total_steps));
  return cfg_.lr_min +
         0.5 * (cfg_.lr - cfg_.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

void AdamW::step(Tape& tape) {
  const double lr_t = current_lr();
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    DiffTensor& p = tape.at(params_[k]);
    if (p.grad.size() != p.values.size())
      throw StateError("AdamW::step: missing gradient; run backward first");
    double* m = m_[k].data();
    double* v = v_[k].data();
    double* x = p.values.data();
    const double* g = p.grad.data();
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x[i]);
    }
  }
}

AdamW::State AdamW::state() const { return State{t_, m_, v_}; }

void AdamW::set_state(const State& s) {
  if (s.m.size() != m_.size() || s.v.size() != v_.size())
    throw StateError("AdamW::set_state: parameter count mismatch");
  for (std::size_t k = 0; k < m_.size(); ++k)
    if (s.m[k].size() != m_[k].size() || s.v[k].size() != v_[k].size())
      throw StateError("AdamW::set_state: parameter shape mismatch");
  t_ = s.t;
  m_ = s.m;
  v_ = s.v;
}

}  // namespace scafds::num
