#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "blockattn/tensor.hpp"

namespace blockattn {

// Adam over an ordered list of (param, grad) flat tensors. The tensor list
// must have the same order and shapes on every step.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::vector<double>*, const std::vector<double>*>>& tensors,
            double lr) {
    if (m_.empty()) {
      for (const auto& [p, g] : tensors) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      auto& [p, g] = tensors[k];
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double gi = (*g)[i];
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        (*p)[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Vec> m_, v_;
};

// Cosine decay from lr_max to lr_min over total steps.
inline double cosine_lr(int step, int total_steps, double lr_max, double lr_min) {
  if (total_steps <= 1) return lr_max;
  const double t = static_cast<double>(step) / (total_steps - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(t * 3.14159265358979323846));
}

}  // namespace blockattn
