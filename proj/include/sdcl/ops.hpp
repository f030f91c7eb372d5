#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sdcl/gemm.hpp"
#include "sdcl/tensor.hpp"
#include "sdcl/util.hpp"

namespace sdcl {

template <typename T>
using NodeT = detail::Node<T>;

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {a, b}, [an, bn](NodeT<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i) bn->grad[i] += n.grad[i];
    }
  });
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {a, b}, [an, bn](NodeT<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i)
        an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < n.numel(); ++i)
        bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto out = Tensor<T>::make_op(a.shape(), {a}, [an, c](NodeT<T>& n) {
    an->ensure_grad();
    for (int64_t i = 0; i < n.numel(); ++i) an->grad[i] += c * n.grad[i];
  });
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = c * pa[i];
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto an = a.node();
  auto out = Tensor<T>::make_op(a.shape(), {a}, [an](NodeT<T>& n) {
    an->ensure_grad();
    for (int64_t i = 0; i < n.numel(); ++i)
      if (an->value[i] > T(0)) an->grad[i] += n.grad[i];
  });
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  return out;
}

/// Concatenates two matrices along columns: (N x p) ++ (N x q) -> N x (p+q).
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: need matrices with equal row count, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int n_rows = a.dim(0), p = a.dim(1), q = b.dim(1);
  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(
      {n_rows, p + q}, {a, b}, [an, bn, n_rows, p, q](NodeT<T>& n) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (int r = 0; r < n_rows; ++r)
            for (int j = 0; j < p; ++j)
              an->grad[r * p + j] += n.grad[r * (p + q) + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int r = 0; r < n_rows; ++r)
            for (int j = 0; j < q; ++j)
              bn->grad[r * q + j] += n.grad[r * (p + q) + p + j];
        }
      });
  T* po = out.data();
  for (int r = 0; r < n_rows; ++r) {
    std::copy_n(a.data() + r * p, p, po + r * (p + q));
    std::copy_n(b.data() + r * q, q, po + r * (p + q) + p);
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto an = a.node();
  auto out = Tensor<T>::make_op({1}, {a}, [an](NodeT<T>& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0];
  });
  T acc = T(0);
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  out.data()[0] = acc;
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

/// Row-wise L2 normalization of an N x d matrix.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& z) {
  if (z.ndim() != 2)
    throw ShapeError("l2_normalize_rows: need a matrix, got " +
                     shape_str(z.shape()));
  int n_rows = z.dim(0), d = z.dim(1);
  std::vector<T> inv_norm(n_rows);
  for (int r = 0; r < n_rows; ++r) {
    T s = T(0);
    const T* row = z.data() + static_cast<int64_t>(r) * d;
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    if (s <= T(0))
      throw NumericalError("l2_normalize_rows: zero-norm row " +
                           std::to_string(r));
    inv_norm[r] = T(1) / std::sqrt(s);
  }
  auto zn = z.node();
  auto out = Tensor<T>::make_op(
      z.shape(), {z}, [zn, inv_norm, n_rows, d](NodeT<T>& n) {
        zn->ensure_grad();
        for (int r = 0; r < n_rows; ++r) {
          const T* y = n.value.data() + static_cast<int64_t>(r) * d;
          const T* g = n.grad.data() + static_cast<int64_t>(r) * d;
          T dot = T(0);
          for (int j = 0; j < d; ++j) dot += g[j] * y[j];
          T* gz = zn->grad.data() + static_cast<int64_t>(r) * d;
          for (int j = 0; j < d; ++j)
            gz[j] += (g[j] - y[j] * dot) * inv_norm[r];
        }
      });
  T* po = out.data();
  for (int r = 0; r < n_rows; ++r)
    for (int j = 0; j < d; ++j)
      po[r * d + j] = z.data()[r * d + j] * inv_norm[r];
  return out;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// y = x * W^T + b with x: N x in, W: out x in, b: out (optional).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear: x " + shape_str(x.shape()) + " incompatible with W " +
                     shape_str(w.shape()));
  int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  bool has_bias = b.defined();
  if (has_bias && (b.ndim() != 1 || b.dim(0) != out_f))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));

  std::vector<Tensor<T>> parents = {x, w};
  if (has_bias) parents.push_back(b);
  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? b.node() : nullptr;
  auto out = Tensor<T>::make_op(
      {n, out_f}, parents, [xn, wn, bn, n, in, out_f](NodeT<T>& node) {
        const T* gy = node.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          gemm<T>(false, false, n, in, out_f, T(1), gy, out_f,
                  wn->value.data(), in, T(1), xn->grad.data(), in);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          gemm<T>(true, false, out_f, in, n, T(1), gy, out_f,
                  xn->value.data(), in, T(1), wn->grad.data(), in);
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int r = 0; r < n; ++r)
            for (int o = 0; o < out_f; ++o) bn->grad[o] += gy[r * out_f + o];
        }
      });
  gemm<T>(false, true, n, out_f, in, T(1), x.data(), in, w.data(), in, T(0),
          out.data(), out_f);
  if (has_bias) {
    T* po = out.data();
    for (int r = 0; r < n; ++r)
      for (int o = 0; o < out_f; ++o) po[r * out_f + o] += b.data()[o];
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>());
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvGeometry {
  int out_h = 0, out_w = 0;
  int pad_h = 0, pad_w = 0;  // leading pad; trailing pad is implicit
};

/// Zero same-padding geometry: output spatial dims are ceil(in/stride); the
/// total pad splits with the smaller half leading.
inline ConvGeometry same_pad_geometry(int h, int w, int kh, int kw, int stride,
                                      int dil_h, int dil_w) {
  ConvGeometry g;
  g.out_h = (h + stride - 1) / stride;
  g.out_w = (w + stride - 1) / stride;
  int eff_h = (kh - 1) * dil_h + 1, eff_w = (kw - 1) * dil_w + 1;
  int total_h = std::max((g.out_h - 1) * stride + eff_h - h, 0);
  int total_w = std::max((g.out_w - 1) * stride + eff_w - w, 0);
  g.pad_h = total_h / 2;
  g.pad_w = total_w / 2;
  return g;
}

namespace detail {

/// Shared conv kernel with per-sample dilation (the uniform-dilation conv is
/// the special case of constant dilation vectors). NCHW, zero same-padding.
template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& bias, int stride,
                      std::vector<int> dil_h, std::vector<int> dil_w) {
  if (x.ndim() != 4)
    throw ShapeError("conv2d: input must be NCHW, got " + shape_str(x.shape()));
  if (w.ndim() != 4)
    throw ShapeError("conv2d: kernel must be (out,in,kh,kw), got " +
                     shape_str(w.shape()));
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in)
    throw ShapeError("conv2d: input has " + std::to_string(c_in) +
                     " channels but kernel expects " + std::to_string(w.dim(1)));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " +
                     shape_str(w.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  for (int i = 0; i < n; ++i)
    if (dil_h[i] < 1 || dil_w[i] < 1)
      throw ShapeError("conv2d: dilation must be >= (1,1)");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != c_out))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));

  // Same-padding keeps the output grid independent of the dilation.
  const ConvGeometry g0 = same_pad_geometry(h, wd, kh, kw, stride, 1, 1);
  const int out_h = g0.out_h, out_w = g0.out_w;
  const int64_t k_sz = static_cast<int64_t>(c_in) * kh * kw;
  const int64_t out_hw = static_cast<int64_t>(out_h) * out_w;
  const int64_t in_sz = static_cast<int64_t>(c_in) * h * wd;
  const int64_t out_sz = static_cast<int64_t>(c_out) * out_hw;

  std::vector<Tensor<T>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? bias.node() : nullptr;

  auto out = Tensor<T>::make_op(
      {n, c_out, out_h, out_w}, parents,
      [=](NodeT<T>& node) {
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        if (need_dx) xn->ensure_grad();
        if (need_dw) wn->ensure_grad();
        int n_chunks = parallel_chunks(n);
        // Per-chunk weight-gradient partials, reduced in chunk order below.
        std::vector<std::vector<T>> dw_parts;
        if (need_dw)
          dw_parts.assign(n_chunks, std::vector<T>(wn->value.size(), T(0)));
        parallel_for_chunked(n, [&](int chunk, int64_t lo, int64_t hi) {
          std::vector<T> col(k_sz * out_hw), dcol;
          if (need_dx) dcol.resize(k_sz * out_hw);
          for (int64_t i = lo; i < hi; ++i) {
            auto geo = same_pad_geometry(h, wd, kh, kw, stride, dil_h[i],
                                         dil_w[i]);
            const T* gy = node.grad.data() + i * out_sz;
            if (need_dw) {
              im2col(xn->value.data() + i * in_sz, c_in, h, wd, kh, kw,
                     stride, dil_h[i], dil_w[i], geo.pad_h, geo.pad_w, out_h,
                     out_w, col.data());
              gemm<T>(false, true, c_out, static_cast<int>(k_sz),
                      static_cast<int>(out_hw), T(1), gy,
                      static_cast<int>(out_hw), col.data(),
                      static_cast<int>(out_hw), T(1), dw_parts[chunk].data(),
                      static_cast<int>(k_sz));
            }
            if (need_dx) {
              gemm<T>(true, false, static_cast<int>(k_sz),
                      static_cast<int>(out_hw), c_out, T(1),
                      wn->value.data(), static_cast<int>(k_sz), gy,
                      static_cast<int>(out_hw), T(0), dcol.data(),
                      static_cast<int>(out_hw));
              col2im(dcol.data(), c_in, h, wd, kh, kw, stride, dil_h[i],
                     dil_w[i], geo.pad_h, geo.pad_w, out_h, out_w,
                     xn->grad.data() + i * in_sz);
            }
          }
        });
        if (need_dw) {
          for (int c = 0; c < n_chunks; ++c)
            for (size_t j = 0; j < wn->grad.size(); ++j)
              wn->grad[j] += dw_parts[c][j];
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int o = 0; o < c_out; ++o) {
              T acc = T(0);
              const T* gy = node.grad.data() + i * out_sz + o * out_hw;
              for (int64_t p = 0; p < out_hw; ++p) acc += gy[p];
              bn->grad[o] += acc;
            }
        }
      });

  T* po = out.data();
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    std::vector<T> col(k_sz * out_hw);
    for (int64_t i = lo; i < hi; ++i) {
      auto geo = same_pad_geometry(h, wd, kh, kw, stride, dil_h[i], dil_w[i]);
      im2col(x.data() + i * in_sz, c_in, h, wd, kh, kw, stride, dil_h[i],
             dil_w[i], geo.pad_h, geo.pad_w, out_h, out_w, col.data());
      gemm<T>(false, false, c_out, static_cast<int>(out_hw),
              static_cast<int>(k_sz), T(1), w.data(), static_cast<int>(k_sz),
              col.data(), static_cast<int>(out_hw), T(0), po + i * out_sz,
              static_cast<int>(out_hw));
      if (has_bias) {
        for (int o = 0; o < c_out; ++o) {
          T bv = bias.data()[o];
          T* row = po + i * out_sz + o * out_hw;
          for (int64_t p = 0; p < out_hw; ++p) row[p] += bv;
        }
      }
    }
  });
  return out;
}

}  // namespace detail

/// Standard 2-D convolution, NCHW, zero same-padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride = 1, int dil_h = 1, int dil_w = 1) {
  int n = x.ndim() == 4 ? x.dim(0) : 0;
  return detail::conv2d_impl(x, w, bias, stride, std::vector<int>(n, dil_h),
                             std::vector<int>(n, dil_w));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1,
                 int dil_h = 1, int dil_w = 1) {
  return conv2d(x, w, Tensor<T>(), stride, dil_h, dil_w);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Running statistics tracked across training steps (eval-mode inputs).
template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  int64_t num_batches = 0;

  explicit BatchNormStats(int channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Batch normalization over axis 1 (channels); works for N x C and NCHW.
/// Training mode normalizes with biased batch statistics and updates the
/// running buffers with momentum; eval mode uses the running buffers.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormStats<T>& stats,
                    bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.ndim() < 2)
    throw ShapeError("batchnorm: need at least 2-D input, got " +
                     shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const int64_t spatial = x.numel() / (static_cast<int64_t>(n) * c);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batchnorm: gamma/beta must have " + std::to_string(c) +
                     " entries");
  if (static_cast<int>(stats.running_mean.size()) != c)
    throw ShapeError("batchnorm: stats track " +
                     std::to_string(stats.running_mean.size()) +
                     " channels, input has " + std::to_string(c));
  if (training && n < 2)
    throw NumericalError(
        "batchnorm: training mode requires batch size >= 2, got " +
        std::to_string(n));

  const int64_t count = static_cast<int64_t>(n) * spatial;
  std::vector<T> mean(c), inv_std(c);
  const T* px = x.data();
  auto at = [&](int64_t i, int ch, int64_t s) {
    return px[(i * c + ch) * spatial + s];
  };
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T m = T(0);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t s = 0; s < spatial; ++s) m += at(i, ch, s);
      m /= static_cast<T>(count);
      T v = T(0);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t s = 0; s < spatial; ++s) {
          T d = at(i, ch, s) - m;
          v += d * d;
        }
      v /= static_cast<T>(count);
      mean[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(v + eps);
      stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] +
                               momentum * m;
      stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] +
                              momentum * v;
    }
    stats.num_batches++;
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  auto out = Tensor<T>::make_op(
      x.shape(), {x, gamma, beta},
      [xn, gn, bn, mean, inv_std, n, c, spatial, count,
       training](NodeT<T>& node) {
        const T* px2 = xn->value.data();
        const T* gy = node.grad.data();
        auto xat = [&](int64_t i, int ch, int64_t s) {
          return px2[(i * c + ch) * spatial + s];
        };
        auto gat = [&](int64_t i, int ch, int64_t s) {
          return gy[(i * c + ch) * spatial + s];
        };
        const bool need_dx = xn->requires_grad;
        if (need_dx) xn->ensure_grad();
        const bool need_dg = gn->requires_grad;
        if (need_dg) gn->ensure_grad();
        const bool need_db = bn->requires_grad;
        if (need_db) bn->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
          const T m = mean[ch], is = inv_std[ch], g = gn->value[ch];
          T sum_gy = T(0), sum_gy_xhat = T(0);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t s = 0; s < spatial; ++s) {
              T xh = (xat(i, ch, s) - m) * is;
              sum_gy += gat(i, ch, s);
              sum_gy_xhat += gat(i, ch, s) * xh;
            }
          if (need_dg) gn->grad[ch] += sum_gy_xhat;
          if (need_db) bn->grad[ch] += sum_gy;
          if (!need_dx) continue;
          if (training) {
            const T inv_count = T(1) / static_cast<T>(count);
            for (int64_t i = 0; i < n; ++i)
              for (int64_t s = 0; s < spatial; ++s) {
                T xh = (xat(i, ch, s) - m) * is;
                T d = gat(i, ch, s) - sum_gy * inv_count -
                      xh * sum_gy_xhat * inv_count;
                xn->grad[(i * c + ch) * spatial + s] += g * is * d;
              }
          } else {
            for (int64_t i = 0; i < n; ++i)
              for (int64_t s = 0; s < spatial; ++s)
                xn->grad[(i * c + ch) * spatial + s] +=
                    g * is * gat(i, ch, s);
          }
        }
      });

  T* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T m = mean[ch], is = inv_std[ch];
      const T g = gamma.data()[ch], b = beta.data()[ch];
      const T* src = px + (i * c + ch) * spatial;
      T* dst = po + (i * c + ch) * spatial;
      for (int64_t s = 0; s < spatial; ++s) dst[s] = g * (src[s] - m) * is + b;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

/// Max pooling with origin-aligned windows (valid extent, no padding).
/// Gradient routes to the first maximum in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  if (x.ndim() != 4)
    throw ShapeError("maxpool2d: input must be NCHW, got " +
                     shape_str(x.shape()));
  if (k < 1 || stride < 1) throw ShapeError("maxpool2d: bad kernel/stride");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k || w < k)
    throw ShapeError("maxpool2d: window " + std::to_string(k) +
                     " exceeds input " + shape_str(x.shape()));
  const int out_h = (h - k) / stride + 1, out_w = (w - k) / stride + 1;
  const int64_t in_hw = static_cast<int64_t>(h) * w;
  const int64_t out_hw = static_cast<int64_t>(out_h) * out_w;

  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<int64_t>(n) * c * out_hw);
  auto xn = x.node();
  auto out = Tensor<T>::make_op(
      {n, c, out_h, out_w}, {x}, [xn, argmax](NodeT<T>& node) {
        xn->ensure_grad();
        for (int64_t i = 0; i < node.numel(); ++i)
          xn->grad[(*argmax)[i]] += node.grad[i];
      });

  const T* px = x.data();
  T* po = out.data();
  parallel_for(static_cast<int64_t>(n) * c, [&](int64_t lo, int64_t hi) {
    for (int64_t plane = lo; plane < hi; ++plane) {
      const T* src = px + plane * in_hw;
      T* dst = po + plane * out_hw;
      int64_t* amax = argmax->data() + plane * out_hw;
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              int64_t idx = static_cast<int64_t>(oh * stride + ki) * w +
                            (ow * stride + kj);
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          dst[oh * out_w + ow] = best;
          amax[oh * out_w + ow] = plane * in_hw + best_idx;
        }
    }
  });
  return out;
}

/// Global average pooling: NCHW -> N x C.
template <typename T>
Tensor<T> avgpool_global(const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError("avgpool_global: input must be NCHW, got " +
                     shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  auto xn = x.node();
  auto out = Tensor<T>::make_op({n, c}, {x}, [xn, n, c, hw](NodeT<T>& node) {
    xn->ensure_grad();
    const T inv = T(1) / static_cast<T>(hw);
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
      T g = node.grad[p] * inv;
      T* dst = xn->grad.data() + p * hw;
      for (int64_t s = 0; s < hw; ++s) dst[s] += g;
    }
  });
  const T* px = x.data();
  T* po = out.data();
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    T acc = T(0);
    const T* src = px + p * hw;
    for (int64_t s = 0; s < hw; ++s) acc += src[s];
    po[p] = acc / static_cast<T>(hw);
  }
  return out;
}

/// Nearest-neighbor upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (x.ndim() != 4)
    throw ShapeError("upsample_nearest: input must be NCHW, got " +
                     shape_str(x.shape()));
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * factor, ow = w * factor;
  const int64_t in_hw = static_cast<int64_t>(h) * w;
  const int64_t out_hw = static_cast<int64_t>(oh) * ow;
  auto xn = x.node();
  auto out = Tensor<T>::make_op(
      {n, c, oh, ow}, {x}, [xn, n, c, h, w, factor, in_hw, out_hw,
                            ow](NodeT<T>& node) {
        xn->ensure_grad();
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
          const T* g = node.grad.data() + p * out_hw;
          T* dst = xn->grad.data() + p * in_hw;
          for (int y = 0; y < h * factor; ++y)
            for (int x2 = 0; x2 < w * factor; ++x2)
              dst[(y / factor) * w + (x2 / factor)] +=
                  g[static_cast<int64_t>(y) * ow + x2];
        }
      });
  const T* px = x.data();
  T* po = out.data();
  parallel_for(static_cast<int64_t>(n) * c, [&](int64_t lo, int64_t hi) {
    for (int64_t p = lo; p < hi; ++p) {
      const T* src = px + p * in_hw;
      T* dst = po + p * out_hw;
      for (int y = 0; y < h * factor; ++y) {
        const T* src_row = src + (y / factor) * w;
        T* dst_row = dst + static_cast<int64_t>(y) * ow;
        for (int x2 = 0; x2 < w * factor; ++x2)
          dst_row[x2] = src_row[x2 / factor];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

/// Numerically stable softmax cross-entropy, averaged over the batch.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be N x L, got " +
                     shape_str(logits.shape()));
  const int n = logits.dim(0), l = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= l)
      throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                      " outside [0," + std::to_string(l) + ")");
  auto ln = logits.node();
  auto out = Tensor<T>::make_op({1}, {logits}, [ln, labels, n, l](NodeT<T>& node) {
    ln->ensure_grad();
    const T g = node.grad[0] / static_cast<T>(n);
    for (int r = 0; r < n; ++r) {
      const T* row = ln->value.data() + static_cast<int64_t>(r) * l;
      T mx = row[0];
      for (int j = 1; j < l; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (int j = 0; j < l; ++j) z += std::exp(row[j] - mx);
      T* grow = ln->grad.data() + static_cast<int64_t>(r) * l;
      for (int j = 0; j < l; ++j) {
        T p = std::exp(row[j] - mx) / z;
        grow[j] += g * (p - (j == labels[r] ? T(1) : T(0)));
      }
    }
  });
  T loss = T(0);
  for (int r = 0; r < n; ++r) {
    const T* row = logits.data() + static_cast<int64_t>(r) * l;
    T mx = row[0];
    for (int j = 1; j < l; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < l; ++j) z += std::exp(row[j] - mx);
    loss += std::log(z) + mx - row[labels[r]];
  }
  out.data()[0] = loss / static_cast<T>(n);
  return out;
}

/// Row-wise softmax probabilities (inference helper, not differentiable).
template <typename T>
std::vector<T> softmax_rows(const T* logits, int n, int l) {
  std::vector<T> probs(static_cast<int64_t>(n) * l);
  for (int r = 0; r < n; ++r) {
    const T* row = logits + static_cast<int64_t>(r) * l;
    T mx = row[0];
    for (int j = 1; j < l; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < l; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < l; ++j)
      probs[static_cast<int64_t>(r) * l + j] = std::exp(row[j] - mx) / z;
  }
  return probs;
}

}  // namespace sdcl
