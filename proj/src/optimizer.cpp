#include "tubemesh/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace tubemesh::nn {

void OptimizerConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("OptimizerConfig: gamma must be in (0,1)");
  }
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument(
          "OptimizerConfig: milestones must be strictly increasing");
    }
  }
  if (learning_rate <= 0.0) {
    throw std::invalid_argument("OptimizerConfig: learning_rate must be > 0");
  }
  if (epsilon <= 0.0) {
    throw std::invalid_argument("OptimizerConfig: epsilon must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("OptimizerConfig: betas must be in [0,1)");
  }
}

double OptimizerConfig::effective_lr(int epoch) const {
  double lr = learning_rate;
  for (int ms : milestones) {
    if (epoch >= ms) lr *= gamma;
  }
  return lr;
}

AdamW::AdamW(std::vector<Parameter*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(std::move(cfg)) {
  cfg_.validate();
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(int epoch) {
  ++t_;
  const double lr = cfg_.effective_lr(epoch);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params_) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw std::runtime_error("AdamW: non-finite gradient in '" + p->name +
                                 "'");
      }
      p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * g;
      p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      // decoupled decay: applied to the value, never to the moments
      p->value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) +
                           cfg_.weight_decay * p->value[i]);
    }
  }
}

}  // namespace tubemesh::nn
