#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdcl/ops.hpp"
#include "sdcl/rng.hpp"
#include "sdcl/tensor.hpp"

namespace sdcl {

/// Named handle to a learnable parameter tensor.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

/// Named view of a non-learnable state buffer (e.g. batchnorm running stats).
template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* data;
};

/// 2-D convolution layer, He-normal init, bias off by default (batchnorm
/// usually follows).
template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;

  template <typename Rng>
  Conv2dLayer(std::string name, int in_ch, int out_ch, int k, int stride,
              Rng& rng, bool with_bias = false)
      : name_(std::move(name)), stride_(stride) {
    T stddev = std::sqrt(T(2) / static_cast<T>(in_ch * k * k));
    weight_ = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, stddev, true);
    if (with_bias) bias_ = Tensor<T>::zeros({out_ch}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight_, bias_, stride_);
  }

  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", weight_});
    if (bias_.defined()) out.push_back({name_ + ".bias", bias_});
  }
  void collect_buffers(std::vector<BufferRef<T>>&) {}

 private:
  std::string name_;
  Tensor<T> weight_, bias_;
  int stride_ = 1;
};

/// Fully connected layer, He-normal init, zero bias.
template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;

  template <typename Rng>
  LinearLayer(std::string name, int in_f, int out_f, Rng& rng,
              bool with_bias = true)
      : name_(std::move(name)) {
    T stddev = std::sqrt(T(2) / static_cast<T>(in_f));
    weight_ = Tensor<T>::randn({out_f, in_f}, rng, stddev, true);
    if (with_bias) bias_ = Tensor<T>::zeros({out_f}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear(x, weight_, bias_);
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", weight_});
    if (bias_.defined()) out.push_back({name_ + ".bias", bias_});
  }
  void collect_buffers(std::vector<BufferRef<T>>&) {}

 private:
  std::string name_;
  Tensor<T> weight_, bias_;
};

/// Batch normalization layer (axis 1), unit gamma / zero beta init, running
/// statistics with momentum 0.1.
template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;

  BatchNormLayer(std::string name, int channels, T momentum = T(0.1))
      : name_(std::move(name)), stats_(channels), momentum_(momentum) {
    gamma_ = Tensor<T>::filled({channels}, T(1), true);
    beta_ = Tensor<T>::zeros({channels}, true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batchnorm(x, gamma_, beta_, stats_, training, momentum_);
  }

  BatchNormStats<T>& stats() { return stats_; }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".gamma", gamma_});
    out.push_back({name_ + ".beta", beta_});
  }
  void collect_buffers(std::vector<BufferRef<T>>& out) {
    out.push_back({name_ + ".running_mean", &stats_.running_mean});
    out.push_back({name_ + ".running_var", &stats_.running_var});
  }

 private:
  std::string name_;
  Tensor<T> gamma_, beta_;
  BatchNormStats<T> stats_;
  T momentum_ = T(0.1);
};

/// Total number of scalar learnable parameters.
template <typename T>
int64_t count_params(const std::vector<ParamRef<T>>& params) {
  int64_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

/// Blends dst <- m * dst + (1 - m) * src parameter-wise (momentum encoder
/// update). Parameter lists must come from identically constructed modules.
template <typename T>
void momentum_update(std::vector<ParamRef<T>>& dst,
                     const std::vector<ParamRef<T>>& src, T m) {
  if (dst.size() != src.size())
    throw ShapeError("momentum_update: parameter lists differ in size");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name ||
        dst[i].tensor.numel() != src[i].tensor.numel())
      throw ShapeError("momentum_update: mismatch at " + dst[i].name);
    T* d = dst[i].tensor.data();
    const T* s = src[i].tensor.data();
    for (int64_t j = 0; j < dst[i].tensor.numel(); ++j)
      d[j] = m * d[j] + (T(1) - m) * s[j];
  }
}

}  // namespace sdcl
