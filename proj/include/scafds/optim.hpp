#pragma once

#include <cstdint>
#include <vector>

#include "scafds/tensor.hpp"

namespace scafds::num {

// Adam with decoupled weight decay and optional cosine-annealed step size:
//   lr_t = lr_min + 0.5 * (lr - lr_min) * (1 + cos(pi * t / total_steps))
//   theta <- theta - lr_t * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)
struct OptimConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool cosine = true;
  int total_steps = 0;  // required when cosine is set
  double lr_min = 0.0;
};

class AdamW {
 public:
  AdamW(OptimConfig cfg, std::vector<Var> params);

  // Reads grads and updates leaf values in place; advances the schedule.
  void step(Tape& tape);

  int steps_taken() const { return t_; }
  double current_lr() const;

  // Serialized moment state for checkpoint resume (values only; the param
  // list and config are re-established by the caller).
  struct State {
    int t = 0;
    std::vector<std::vector<double>> m, v;
  };
  State state() const;
  void set_state(const State& s);

 private:
  OptimConfig cfg_;
  std::vector<Var> params_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

}  // namespace scafds::num
