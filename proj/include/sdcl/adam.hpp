#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdcl/nn.hpp"
#include "sdcl/tensor.hpp"
#include "sdcl/util.hpp"

namespace sdcl {

/// Adam with bias correction and decoupled weight decay. Moment buffers are
/// keyed by parameter name and sized on first use.
template <typename T>
class AdamState {
 public:
  T lr = T(1e-3);
  T weight_decay = T(0);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  AdamState() = default;
  AdamState(T lr_, T weight_decay_) : lr(lr_), weight_decay(weight_decay_) {}

  int64_t step_count() const { return step_; }

  /// One update over all parameters. Parameters whose gradient buffer was
  /// never touched this step are treated as zero-gradient.
  void step(std::vector<ParamRef<T>>& params) {
    step_++;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_));
    for (auto& p : params) {
      auto& slot = moments_[p.name];
      const int64_t n = p.tensor.numel();
      if (slot.m.empty()) {
        slot.m.assign(n, T(0));
        slot.v.assign(n, T(0));
      } else if (static_cast<int64_t>(slot.m.size()) != n) {
        throw ShapeError("adam: moment buffer for " + p.name +
                         " does not match parameter size");
      }
      T* w = p.tensor.data();
      const bool has_grad = p.tensor.has_grad();
      const T* g = has_grad ? p.tensor.grad().data() : nullptr;
      if (has_grad) {
        for (int64_t i = 0; i < n; ++i)
          if (!std::isfinite(g[i]))
            throw NumericalError("adam: non-finite gradient in parameter '" +
                                 p.name + "'");
      }
      if (weight_decay != T(0))
        for (int64_t i = 0; i < n; ++i) w[i] -= lr * weight_decay * w[i];
      for (int64_t i = 0; i < n; ++i) {
        T gi = has_grad ? g[i] : T(0);
        slot.m[i] = beta1 * slot.m[i] + (T(1) - beta1) * gi;
        slot.v[i] = beta2 * slot.v[i] + (T(1) - beta2) * gi * gi;
        T m_hat = slot.m[i] / bc1;
        T v_hat = slot.v[i] / bc2;
        w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }

  void zero_grad(std::vector<ParamRef<T>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
  }

 private:
  struct Moments {
    std::vector<T> m, v;
  };
  std::unordered_map<std::string, Moments> moments_;
  int64_t step_ = 0;
};

}  // namespace sdcl
