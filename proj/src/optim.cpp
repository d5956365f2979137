#include "dymesh/optim.hpp"

#include <cmath>

namespace dymesh {

void AdamOptimizer::step(const std::vector<Tensor>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    auto node = p.node().get();
    Slot& slot = state_[node];
    if (slot.m.size() != node->data.size()) {
      slot.m.assign(node->data.size(), 0.0);
      slot.v.assign(node->data.size(), 0.0);
    }
    for (size_t i = 0; i < node->data.size(); ++i) {
      double g = node->grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      node->data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

}  // namespace dymesh
