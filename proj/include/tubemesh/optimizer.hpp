#pragma once

#include <vector>

#include "tubemesh/tape.hpp"

namespace tubemesh::nn {

struct OptimizerConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<int> milestones;
  double gamma = 0.1;

  void validate() const;

  // learning_rate * gamma^(number of milestones <= epoch)
  double effective_lr(int epoch) const;
};

// AdamW with decoupled weight decay and a milestone learning-rate schedule.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, OptimizerConfig cfg);

  void zero_grad();
  void step(int epoch);
  long step_count() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  long t_ = 0;
};

}  // namespace tubemesh::nn
