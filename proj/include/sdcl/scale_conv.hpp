#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdcl/nn.hpp"
#include "sdcl/ops.hpp"
#include "sdcl/tensor.hpp"
#include "sdcl/util.hpp"

namespace sdcl {

/// Original (pre-resize) crop dimensions of one object, in pixels. Stored as
/// floats because geometric augmentations rescale them continuously.
struct SizeRecord {
  double h = 0;
  double w = 0;
};

/// Dilation factor along one axis: max(floor(u_f * target / a), 1), where a
/// is the object's original extent along that axis. Larger objects get
/// smaller dilation; never below 1.
inline int compute_dilation(int axis_len, int upscale_factor,
                            int target_side) {
  if (axis_len < 1)
    throw ConfigError("compute_dilation: axis length must be >= 1, got " +
                      std::to_string(axis_len));
  if (upscale_factor < 1 || target_side < 1)
    throw ConfigError("compute_dilation: factors must be >= 1");
  return std::max((upscale_factor * target_side) / axis_len, 1);
}

/// Float sizes are floored to whole pixels at this boundary (and kept >= 1,
/// matching the layer's positive-size precondition).
inline int compute_dilation(double axis_len, int upscale_factor,
                            int target_side) {
  if (!(axis_len > 0) || !std::isfinite(axis_len))
    throw ConfigError("compute_dilation: axis length must be positive");
  int floored = std::max(static_cast<int>(std::floor(axis_len)), 1);
  return compute_dilation(floored, upscale_factor, target_side);
}

/// Dilated convolution with an independent dilation pair per batch element;
/// stride 1, zero same-padding. Reduces to conv2d when all dilations agree.
template <typename T>
Tensor<T> sdcl_inner(const Tensor<T>& x, const Tensor<T>& w,
                     const std::vector<int>& dil_h,
                     const std::vector<int>& dil_w) {
  if (x.ndim() != 4)
    throw ShapeError("sdcl_inner: input must be NCHW, got " +
                     shape_str(x.shape()));
  if (static_cast<int>(dil_h.size()) != x.dim(0) ||
      static_cast<int>(dil_w.size()) != x.dim(0))
    throw DataError("sdcl_inner: need one (d_h,d_w) pair per batch element (" +
                    std::to_string(x.dim(0)) + " samples, got " +
                    std::to_string(dil_h.size()) + ")");
  return detail::conv2d_impl(x, w, Tensor<T>(), 1, dil_h, dil_w);
}

/// The scale-dependent convolutional layer: nearest upsampling by u_f,
/// per-sample dilated convolution with dilation derived from each object's
/// original size, then origin-aligned u_f max-pooling back to the input grid.
template <typename T>
class ScaleDependentConv {
 public:
  ScaleDependentConv() = default;

  template <typename Rng>
  ScaleDependentConv(std::string name, int in_ch, int out_ch, int k, Rng& rng,
                     int upscale_factor = 3, int target_side = 32)
      : name_(std::move(name)),
        upscale_(upscale_factor),
        target_side_(target_side) {
    if (upscale_factor < 1)
      throw ConfigError("ScaleDependentConv: upscale factor must be >= 1");
    T stddev = std::sqrt(T(2) / static_cast<T>(in_ch * k * k));
    weight_ = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, stddev, true);
  }

  /// sizes[i] is the original (pre-resize) crop size of batch element i.
  Tensor<T> forward(const Tensor<T>& x,
                    const std::vector<SizeRecord>& sizes) const {
    if (x.ndim() != 4)
      throw ShapeError("ScaleDependentConv: input must be NCHW");
    if (static_cast<int>(sizes.size()) != x.dim(0))
      throw DataError("ScaleDependentConv: " + std::to_string(sizes.size()) +
                      " size records for batch of " + std::to_string(x.dim(0)));
    const int n = x.dim(0);
    std::vector<int> dil_h(n), dil_w(n);
    for (int i = 0; i < n; ++i) {
      dil_h[i] = compute_dilation(sizes[i].h, upscale_, target_side_);
      dil_w[i] = compute_dilation(sizes[i].w, upscale_, target_side_);
    }
    Tensor<T> up = upsample_nearest(x, upscale_);
    Tensor<T> conv = sdcl_inner(up, weight_, dil_h, dil_w);
    if (upscale_ == 1) return conv;
    return maxpool2d(conv, upscale_, upscale_);
  }

  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }
  int upscale_factor() const { return upscale_; }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", weight_});
  }
  void collect_buffers(std::vector<BufferRef<T>>&) {}

 private:
  std::string name_;
  Tensor<T> weight_;
  int upscale_ = 3;
  int target_side_ = 32;
};

}  // namespace sdcl
