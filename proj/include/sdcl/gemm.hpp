#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace sdcl {

/// C (M x N) = alpha * op(A) * op(B) + beta * C, all buffers row-major with
/// explicit leading dimensions. Internally mapped as column-major transposes
/// so Eigen's packed GEMM kernel runs at full speed. Single-threaded and
/// deterministic; callers parallelize across independent outputs.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
          const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  using CM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
  using Stride = Eigen::OuterStride<>;
  using MapC = Eigen::Map<CM, 0, Stride>;
  using MapConst = Eigen::Map<const CM, 0, Stride>;

  // Row-major (r x c, ld) buffer viewed column-major is its transpose (c x r).
  MapC ct(c, n, m, Stride(ldc));
  MapConst at(a, trans_a ? m : k, trans_a ? k : m, Stride(lda));
  MapConst bt(b, trans_b ? k : n, trans_b ? n : k, Stride(ldb));

  // C^T = op(B)^T * op(A)^T.
  auto assemble = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0)) {
      if (alpha == T(1))
        ct.noalias() = lhs * rhs;
      else
        ct.noalias() = alpha * (lhs * rhs);
    } else {
      if (beta != T(1)) ct *= beta;
      if (alpha == T(1))
        ct.noalias() += lhs * rhs;
      else
        ct.noalias() += alpha * (lhs * rhs);
    }
  };
  if (!trans_a && !trans_b)
    assemble(bt, at);
  else if (!trans_a && trans_b)
    assemble(bt.transpose(), at);
  else if (trans_a && !trans_b)
    assemble(bt, at.transpose());
  else
    assemble(bt.transpose(), at.transpose());
}

/// Unfolds one image (C x H x W, row-major) into the patch matrix
/// ((C*kh*kw) x (out_h*out_w)). Out-of-bounds taps contribute zero.
template <typename T>
void im2col(const T* img, int channels, int height, int width, int kh, int kw,
            int stride, int dil_h, int dil_w, int pad_h, int pad_w, int out_h,
            int out_w, T* col) {
  const int64_t out_hw = static_cast<int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<int64_t>(c) * height * width;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * out_hw;
        for (int oh = 0; oh < out_h; ++oh) {
          int ih = oh * stride - pad_h + ki * dil_h;
          T* row = dst + static_cast<int64_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src_row = src + static_cast<int64_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            int iw = ow * stride - pad_w + kj * dil_w;
            row[ow] = (iw >= 0 && iw < width) ? src_row[iw] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col: folds the patch matrix back into an image
/// that must be zero-initialized by the caller.
template <typename T>
void col2im(const T* col, int channels, int height, int width, int kh, int kw,
            int stride, int dil_h, int dil_w, int pad_h, int pad_w, int out_h,
            int out_w, T* img) {
  const int64_t out_hw = static_cast<int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst_img = img + static_cast<int64_t>(c) * height * width;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src =
            col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * out_hw;
        for (int oh = 0; oh < out_h; ++oh) {
          int ih = oh * stride - pad_h + ki * dil_h;
          if (ih < 0 || ih >= height) continue;
          T* dst_row = dst_img + static_cast<int64_t>(ih) * width;
          const T* src_row = src + static_cast<int64_t>(oh) * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            int iw = ow * stride - pad_w + kj * dil_w;
            if (iw >= 0 && iw < width) dst_row[iw] += src_row[ow];
          }
        }
      }
    }
  }
}

}  // namespace sdcl
