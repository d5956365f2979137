#pragma once

#include <unordered_map>
#include <vector>

#include "dymesh/tensor.hpp"

namespace dymesh {

// Adam with bias correction. State is keyed by parameter node, so the same
// optimizer instance can be reused across steps as long as the parameter
// tensors stay alive.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 2e-4, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor>& params);
  static void zero_grad(const std::vector<Tensor>& params);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<detail::TensorNode*, Slot> state_;
};

}  // namespace dymesh
