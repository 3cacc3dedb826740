#ifndef SHAKEDROP_OPTIMIZER_HPP_
#define SHAKEDROP_OPTIMIZER_HPP_

#include <cmath>
#include <stdexcept>
#include <vector>

#include "shakedrop/autograd.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

struct OptimizerConfig {
  Real base_lr = 0.1;
  Real momentum = 0.9;
  bool nesterov = true;
  Real weight_decay = 1e-4;
  int batch_size = 128;

  void validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr))
      throw std::invalid_argument("optimizer: base_lr must be positive and finite");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
      throw std::invalid_argument("optimizer: weight_decay must be >= 0 and finite");
    if (batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
  }
};

struct LRSchedule {
  std::vector<int> milestones{30, 45};
  Real factor = 0.1;
  int total_epochs = 60;

  void validate() const {
    if (total_epochs < 0) throw std::invalid_argument("schedule: total_epochs must be >= 0");
    if (!(factor > 0.0)) throw std::invalid_argument("schedule: factor must be positive");
    int prev = -1;
    for (int m : milestones) {
      if (m <= prev) throw std::invalid_argument("schedule: milestones must be strictly increasing");
      if (m >= total_epochs)
        throw std::invalid_argument("schedule: milestones must be < total_epochs");
      prev = m;
    }
  }
};

// base_lr * factor^(number of milestones <= epoch).
inline Real lr_at(int epoch, const LRSchedule& sched, Real base_lr) {
  if (epoch < 0 || epoch >= sched.total_epochs)
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside 0.." +
                                std::to_string(sched.total_epochs - 1));
  Real lr = base_lr;
  for (int m : sched.milestones)
    if (m <= epoch) lr *= sched.factor;
  return lr;
}

// One SGD step over all trainable parameters. Weight decay is applied as a
// gradient augmentation g <- g + wd*w; with nesterov the update is
// v <- mu*v - lr*g, w <- w + mu*v - lr*g, otherwise w <- w + v.
// Returns false (and leaves every parameter untouched, gradients intact) if
// any gradient is non-finite; on success gradients are zeroed.
inline bool sgd_step(const std::vector<Parameter*>& params, std::vector<Tensor>& velocity,
                     const OptimizerConfig& cfg, Real lr) {
  if (velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: velocity state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->value.same_shape(velocity[i]))
      throw std::invalid_argument("sgd_step: velocity shape mismatch");
    if (params[i]->trainable && !params[i]->grad.all_finite()) return false;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) {
      p.zero_grad();
      continue;
    }
    Tensor& v = velocity[i];
    for (int j = 0; j < p.value.numel(); ++j) {
      const Real g = p.grad[j] + cfg.weight_decay * p.value[j];
      v[j] = cfg.momentum * v[j] - lr * g;
      p.value[j] += cfg.nesterov ? cfg.momentum * v[j] - lr * g : v[j];
    }
    p.zero_grad();
  }
  return true;
}

// Velocity-state wrapper for a fixed parameter list.
class SgdOptimizer {
 public:
  SgdOptimizer(const std::vector<Parameter*>& params, OptimizerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    velocity_.reserve(params.size());
    for (Parameter* p : params) velocity_.push_back(Tensor::zeros_like(p->value));
  }

  bool step(const std::vector<Parameter*>& params, Real lr) {
    return sgd_step(params, velocity_, cfg_, lr);
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace shakedrop

#endif  // SHAKEDROP_OPTIMIZER_HPP_
