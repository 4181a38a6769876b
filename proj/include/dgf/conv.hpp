#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <cstring>
#include <utility>
#include <vector>

#include "dgf/ops.hpp"
#include "dgf/scratch.hpp"
#include "dgf/thread_pool.hpp"

namespace dgf {

struct Conv2dAttrs {
  int64_t kh = 3;
  int64_t kw = 3;
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t dilation = 1;

  static Conv2dAttrs square(int64_t k, int64_t stride = 1, int64_t pad = 0) {
    return Conv2dAttrs{k, k, stride, pad, 1};
  }
};

namespace detail {

template <typename S>
using ColMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// Row-major products expressed through column-major views (measurably faster
// in Eigen for the small-M shapes convolution produces). All pointers are
// row-major contiguous.

/// C[MxN] = A[MxK] * B[KxN].
template <typename S>
void gemm_nn(S* C, const S* A, const S* B, int64_t M, int64_t K, int64_t N) {
  Eigen::Map<ColMat<S>> c(C, N, M);
  Eigen::Map<const ColMat<S>> a(A, K, M), b(B, N, K);
  c.noalias() = b * a;
}

/// C[MxN] = A[MxD] * B[NxD]^T.
template <typename S>
void gemm_nt(S* C, const S* A, const S* B, int64_t M, int64_t D, int64_t N) {
  Eigen::Map<ColMat<S>> c(C, N, M);
  Eigen::Map<const ColMat<S>> a(A, D, M), b(B, D, N);
  c.noalias() = b.transpose() * a;
}

/// C[MxN] = A[DxM]^T * B[DxN].
template <typename S>
void gemm_tn(S* C, const S* A, const S* B, int64_t M, int64_t D, int64_t N) {
  Eigen::Map<ColMat<S>> c(C, N, M);
  Eigen::Map<const ColMat<S>> a(A, M, D), b(B, N, D);
  c.noalias() = b * a.transpose();
}

inline int64_t conv_extent(int64_t in, int64_t k, int64_t stride, int64_t pad, int64_t dilation,
                           const char* op) {
  if (stride < 1 || dilation < 1 || pad < 0)
    throw DimensionError(std::string(op) + ": stride/dilation must be positive, padding non-negative");
  const int64_t span = dilation * (k - 1) + 1;
  const int64_t out = (in + 2 * pad - span) / stride + 1;
  require(out >= 1, std::string(op) + ": output extent < 1 for input " + std::to_string(in));
  return out;
}

// Unrolls one sample into (Cin*kh*kw) x (Ho*Wo) columns, zero padding.
// The stride-1 / dilation-1 case copies contiguous row segments.
template <typename S>
void im2col(const S* x, int64_t Cin, int64_t H, int64_t W, const Conv2dAttrs& a, int64_t Ho,
            int64_t Wo, S* cols) {
  const int64_t span = Ho * Wo;
  const bool fast = a.stride == 1 && a.dilation == 1;
  for (int64_t c = 0; c < Cin; ++c) {
    const S* src = x + c * H * W;
    for (int64_t i = 0; i < a.kh; ++i)
      for (int64_t j = 0; j < a.kw; ++j) {
        S* dst = cols + ((c * a.kh + i) * a.kw + j) * span;
        if (fast) {
          const int64_t shift = j - a.pad;
          const int64_t lo = std::max<int64_t>(0, -shift);
          const int64_t hi = std::min<int64_t>(Wo, W - shift);
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const int64_t y = oy - a.pad + i;
            S* drow = dst + oy * Wo;
            if (y < 0 || y >= H || lo >= hi) {
              std::fill_n(drow, Wo, S(0));
              continue;
            }
            if (lo > 0) std::fill_n(drow, lo, S(0));
            std::memcpy(drow + lo, src + y * W + lo + shift,
                        static_cast<size_t>(hi - lo) * sizeof(S));
            if (hi < Wo) std::fill_n(drow + hi, Wo - hi, S(0));
          }
          continue;
        }
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t y = oy * a.stride - a.pad + i * a.dilation;
          S* drow = dst + oy * Wo;
          if (y < 0 || y >= H) {
            std::fill_n(drow, Wo, S(0));
            continue;
          }
          const S* row = src + y * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t xw = ox * a.stride - a.pad + j * a.dilation;
            drow[ox] = (xw >= 0 && xw < W) ? row[xw] : S(0);
          }
        }
      }
  }
}

// Adjoint of im2col: accumulates columns back into the image.
template <typename S>
void col2im(const S* cols, int64_t Cin, int64_t H, int64_t W, const Conv2dAttrs& a, int64_t Ho,
            int64_t Wo, S* x) {
  const int64_t span = Ho * Wo;
  const bool fast = a.stride == 1 && a.dilation == 1;
  for (int64_t c = 0; c < Cin; ++c) {
    S* dst = x + c * H * W;
    for (int64_t i = 0; i < a.kh; ++i)
      for (int64_t j = 0; j < a.kw; ++j) {
        const S* src = cols + ((c * a.kh + i) * a.kw + j) * span;
        if (fast) {
          const int64_t shift = j - a.pad;
          const int64_t lo = std::max<int64_t>(0, -shift);
          const int64_t hi = std::min<int64_t>(Wo, W - shift);
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const int64_t y = oy - a.pad + i;
            if (y < 0 || y >= H || lo >= hi) continue;
            S* drow = dst + y * W + shift;
            const S* srow = src + oy * Wo;
            for (int64_t ox = lo; ox < hi; ++ox) drow[ox] += srow[ox];
          }
          continue;
        }
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t y = oy * a.stride - a.pad + i * a.dilation;
          if (y < 0 || y >= H) continue;
          S* row = dst + y * W;
          const S* srow = src + oy * Wo;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t xw = ox * a.stride - a.pad + j * a.dilation;
            if (xw >= 0 && xw < W) row[xw] += srow[ox];
          }
        }
      }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d_dx(const Tensor<S>& gy, const Tensor<S>& w, Conv2dAttrs attrs, int64_t H, int64_t W);
template <typename S>
Tensor<S> conv2d_dw(const Tensor<S>& x, const Tensor<S>& gy, Conv2dAttrs attrs, int64_t kh, int64_t kw);

/// Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw], zero padding.
/// Bias-free; see conv2d for the affine variant.
template <typename S>
Tensor<S> conv2d_raw(const Tensor<S>& x, const Tensor<S>& w, Conv2dAttrs attrs) {
  detail::require_4d(x, "conv2d");
  detail::require_4d(w, "conv2d weight");
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " do not match weight channels " + std::to_string(w.dim(1)));
  if (w.dim(2) != attrs.kh || w.dim(3) != attrs.kw)
    throw DimensionError("conv2d: weight extents do not match kernel attributes");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = w.dim(0);
  const int64_t Ho = detail::conv_extent(H, attrs.kh, attrs.stride, attrs.pad, attrs.dilation, "conv2d");
  const int64_t Wo = detail::conv_extent(W, attrs.kw, attrs.stride, attrs.pad, attrs.dilation, "conv2d");
  const int64_t K = Cin * attrs.kh * attrs.kw;
  const int64_t span = Ho * Wo;
  Vec<S> out(static_cast<size_t>(B * Cout * span));
  ThreadPool::global().parallel_for(B, [&](int64_t b) {
    S* cols = detail::scratch_buffer<S>(0, static_cast<size_t>(K * span));
    detail::im2col(x.data() + b * Cin * H * W, Cin, H, W, attrs, Ho, Wo, cols);
    detail::gemm_nn(out.data() + b * Cout * span, w.data(), cols, Cout, K, span);
  });
  const int64_t kh = attrs.kh, kw = attrs.kw;
  return Tensor<S>::make_op({B, Cout, Ho, Wo}, std::move(out), {x, w},
                            [x, w, attrs, H, W, kh, kw](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{conv2d_dx(g, w, attrs, H, W),
                                                            conv2d_dw(x, g, attrs, kh, kw)};
                            });
}

/// Adjoint of conv2d_raw in its input: maps output-shaped gy to input-shaped
/// values. Bilinear in (gy, w); differentiable to any order. For unit stride
/// this is itself a convolution with the channel-transposed, spatially
/// flipped kernel, which keeps the work inside the matrix product.
template <typename S>
Tensor<S> conv2d_dx(const Tensor<S>& gy, const Tensor<S>& w, Conv2dAttrs attrs, int64_t H, int64_t W) {
  const int64_t B = gy.dim(0), Cout = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t Cin = w.dim(1);
  const int64_t span = Ho * Wo;
  Vec<S> out;
  if (attrs.stride == 1 && attrs.dilation == 1 && attrs.kh == attrs.kw &&
      attrs.pad <= attrs.kh - 1) {
    const int64_t kh = attrs.kh, kw = attrs.kw;
    std::vector<S> wft(static_cast<size_t>(Cin * Cout * kh * kw));
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t i = 0; i < kh; ++i)
          for (int64_t j = 0; j < kw; ++j)
            wft[((ci * Cout + co) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] =
                w.values()[((co * Cin + ci) * kh + i) * kw + j];
    Conv2dAttrs back = attrs;
    back.pad = attrs.kh - 1 - attrs.pad;  // square kernels throughout
    const int64_t K = Cout * kh * kw;
    out.resize(static_cast<size_t>(B * Cin * H * W));
    ThreadPool::global().parallel_for(B, [&](int64_t b) {
      S* cols = detail::scratch_buffer<S>(0, static_cast<size_t>(K * H * W));
      detail::im2col(gy.data() + b * Cout * span, Cout, Ho, Wo, back, H, W, cols);
      detail::gemm_nn(out.data() + b * Cin * H * W, wft.data(), cols, Cin, K, H * W);
    });
  } else {
    const int64_t K = Cin * attrs.kh * attrs.kw;
    out.assign(static_cast<size_t>(B * Cin * H * W), S(0));
    ThreadPool::global().parallel_for(B, [&](int64_t b) {
      S* cols = detail::scratch_buffer<S>(0, static_cast<size_t>(K * span));
      detail::gemm_tn(cols, w.data(), gy.data() + b * Cout * span, K, Cout, span);
      detail::col2im(cols, Cin, H, W, attrs, Ho, Wo, out.data() + b * Cin * H * W);
    });
  }
  return Tensor<S>::make_op({B, Cin, H, W}, std::move(out), {gy, w},
                            [gy, w, attrs](const Tensor<S>& gg) {
                              return std::vector<Tensor<S>>{
                                  conv2d_raw(gg, w, attrs),
                                  conv2d_dw(gg, gy, attrs, attrs.kh, attrs.kw)};
                            });
}

/// Adjoint of conv2d_raw in its weight. Bilinear in (x, gy).
template <typename S>
Tensor<S> conv2d_dw(const Tensor<S>& x, const Tensor<S>& gy, Conv2dAttrs attrs, int64_t kh, int64_t kw) {
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t K = Cin * kh * kw;
  const int64_t span = Ho * Wo;
  std::vector<Vec<S>> partial(static_cast<size_t>(B));
  ThreadPool::global().parallel_for(B, [&](int64_t b) {
    S* cols = detail::scratch_buffer<S>(0, static_cast<size_t>(K * span));
    detail::im2col(x.data() + b * Cin * H * W, Cin, H, W, attrs, Ho, Wo, cols);
    partial[static_cast<size_t>(b)].resize(static_cast<size_t>(Cout * K));
    detail::gemm_nt(partial[static_cast<size_t>(b)].data(), gy.data() + b * Cout * span, cols, Cout,
                    span, K);
  });
  Vec<S> out(static_cast<size_t>(Cout * K), S(0));
  for (int64_t b = 0; b < B; ++b)  // fixed order keeps the sum deterministic
    for (size_t i = 0; i < out.size(); ++i) out[i] += partial[static_cast<size_t>(b)][i];
  const int64_t Himg = H, Wimg = W;
  return Tensor<S>::make_op({Cout, Cin, kh, kw}, std::move(out), {x, gy},
                            [x, gy, attrs, Himg, Wimg](const Tensor<S>& gw) {
                              return std::vector<Tensor<S>>{
                                  conv2d_dx(gy, gw, attrs, Himg, Wimg),
                                  conv2d_raw(x, gw, attrs)};
                            });
}

/// Convolution with per-output-channel bias folded into the kernel pass.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, Conv2dAttrs attrs) {
  if (!bias.defined()) return conv2d_raw(x, w, attrs);
  detail::require_4d(x, "conv2d");
  detail::require_4d(w, "conv2d weight");
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " do not match weight channels " + std::to_string(w.dim(1)));
  if (w.dim(2) != attrs.kh || w.dim(3) != attrs.kw)
    throw DimensionError("conv2d: weight extents do not match kernel attributes");
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0))
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = w.dim(0);
  const int64_t Ho = detail::conv_extent(H, attrs.kh, attrs.stride, attrs.pad, attrs.dilation, "conv2d");
  const int64_t Wo = detail::conv_extent(W, attrs.kw, attrs.stride, attrs.pad, attrs.dilation, "conv2d");
  const int64_t K = Cin * attrs.kh * attrs.kw;
  const int64_t span = Ho * Wo;
  Vec<S> out(static_cast<size_t>(B * Cout * span));
  const S* bv = bias.data();
  ThreadPool::global().parallel_for(B, [&](int64_t b) {
    S* cols = detail::scratch_buffer<S>(0, static_cast<size_t>(K * span));
    detail::im2col(x.data() + b * Cin * H * W, Cin, H, W, attrs, Ho, Wo, cols);
    S* dst = out.data() + b * Cout * span;
    detail::gemm_nn(dst, w.data(), cols, Cout, K, span);
    for (int64_t co = 0; co < Cout; ++co) {
      const S bc = bv[co];
      S* row = dst + co * span;
      for (int64_t i = 0; i < span; ++i) row[i] += bc;
    }
  });
  const int64_t kh = attrs.kh, kw = attrs.kw;
  return Tensor<S>::make_op({B, Cout, Ho, Wo}, std::move(out), {x, w, bias},
                            [x, w, attrs, H, W, kh, kw](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{conv2d_dx(g, w, attrs, H, W),
                                                            conv2d_dw(x, g, attrs, kh, kw),
                                                            channel_sum(g)};
                            });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, Conv2dAttrs attrs) {
  return conv2d_raw(x, w, attrs);
}

// ---------------------------------------------------------------------------
// matmul (closed under its own gradients) and fully_connected
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 tensors");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Vec<S> out(static_cast<size_t>(m * n));
  if (!trans_a && !trans_b)
    detail::gemm_nn(out.data(), a.data(), b.data(), m, ka, n);
  else if (!trans_a && trans_b)
    detail::gemm_nt(out.data(), a.data(), b.data(), m, ka, n);
  else if (trans_a && !trans_b)
    detail::gemm_tn(out.data(), a.data(), b.data(), m, ka, n);
  else {
    // A^T * B^T: rare; evaluate through Eigen transposed views directly.
    Eigen::Map<detail::ColMat<S>> c(out.data(), n, m);
    Eigen::Map<const detail::ColMat<S>> am(a.data(), a.dim(1), a.dim(0));
    Eigen::Map<const detail::ColMat<S>> bm(b.data(), b.dim(1), b.dim(0));
    c.noalias() = bm.transpose() * am.transpose();
  }
  return Tensor<S>::make_op({m, n}, std::move(out), {a, b}, [a, b, trans_a, trans_b](const Tensor<S>& g) {
    Tensor<S> da = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
    Tensor<S> db = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
    return std::vector<Tensor<S>>{da, db};
  });
}

/// Affine map: x[B,N] * weight[M,N]^T + bias[M].
template <typename S>
Tensor<S> fully_connected(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (x.rank() != 2 || weight.rank() != 2)
    throw DimensionError("fully_connected expects 2-D input and weight");
  if (x.dim(1) != weight.dim(1))
    throw DimensionError("fully_connected: input width " + std::to_string(x.dim(1)) +
                         " does not match weight width " + std::to_string(weight.dim(1)));
  Tensor<S> y = matmul(x, weight, false, true);
  if (!bias.defined()) return y;
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
    throw DimensionError("fully_connected: bias length does not match output width");
  return add(y, bcast_rows(bias, x.dim(0)));
}

}  // namespace dgf
