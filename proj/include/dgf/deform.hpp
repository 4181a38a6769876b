#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dgf/conv.hpp"

namespace dgf {

/// Sampling parameters of a deformable kernel: per output position and tap,
/// a (dy, dx) displacement in input pixels and a modulation mask in [0,1].
/// offsets: [B, 2K, H', W'] with channels (dy_0, dx_0, dy_1, dx_1, ...) in
/// row-major tap order; masks: [B, K, H', W']. The mask range is enforced by
/// a sigmoid at the site that predicts it.
template <typename S>
struct DeformParams {
  Tensor<S> offsets;
  Tensor<S> masks;
};

/// 4-neighbor bilinear interpolation on one plane. Samples at or beyond one
/// pixel outside the image contribute zero, as do out-of-bounds neighbors.
template <typename S>
S bilinear_at(const S* plane, int64_t H, int64_t W, S y, S x) {
  if (y <= S(-1) || y >= static_cast<S>(H) || x <= S(-1) || x >= static_cast<S>(W)) return S(0);
  const int64_t yl = static_cast<int64_t>(std::floor(y));
  const int64_t xl = static_cast<int64_t>(std::floor(x));
  const int64_t yh = yl + 1, xh = xl + 1;
  const S ly = y - static_cast<S>(yl), lx = x - static_cast<S>(xl);
  const S hy = S(1) - ly, hx = S(1) - lx;
  S v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  if (yl >= 0) {
    if (xl >= 0) v00 = plane[yl * W + xl];
    if (xh < W) v01 = plane[yl * W + xh];
  }
  if (yh < H) {
    if (xl >= 0) v10 = plane[yh * W + xl];
    if (xh < W) v11 = plane[yh * W + xh];
  }
  return hy * (hx * v00 + lx * v01) + ly * (hx * v10 + lx * v11);
}

template <typename S>
S bilinear_sample(const Tensor<S>& plane, S y, S x) {
  if (plane.rank() != 2) throw DimensionError("bilinear_sample expects a [H,W] plane");
  return bilinear_at(plane.data(), plane.dim(0), plane.dim(1), y, x);
}

namespace detail {

// Row of precomputed sampling geometry for one kernel tap. `base` indexes the
// top-left neighbor; interior rows skip all bounds checks. The derivative
// convention at integer coordinates follows the containing (floor-based)
// cell.
template <typename S>
struct RowGeom {
  std::vector<int64_t> base;   // yl * W + xl, valid on interior positions
  std::vector<int64_t> yl_v, xl_v;
  std::vector<S> w00, w01, w10, w11, ly, lx;
  std::vector<uint8_t> flags;  // bit0 inside, bit1 interior
  bool all_interior = false;

  void resize(int64_t n) {
    base.resize(n);
    yl_v.resize(n);
    xl_v.resize(n);
    w00.resize(n);
    w01.resize(n);
    w10.resize(n);
    w11.resize(n);
    ly.resize(n);
    lx.resize(n);
    flags.resize(n);
  }

  void compute(int64_t oy, int64_t ki, int64_t kj, const Conv2dAttrs& a, const S* off_y,
               const S* off_x, int64_t Wo, int64_t H, int64_t W) {
    const int64_t row = oy * Wo;
    const S base_y = static_cast<S>(oy * a.stride - a.pad + ki * a.dilation);
    bool interior_all = true;
    for (int64_t ox = 0; ox < Wo; ++ox) {
      const S y = base_y + off_y[row + ox];
      const S x = static_cast<S>(ox * a.stride - a.pad + kj * a.dilation) + off_x[row + ox];
      const bool inside =
          !(y <= S(-1) || y >= static_cast<S>(H) || x <= S(-1) || x >= static_cast<S>(W));
      if (!inside) {
        flags[ox] = 0;
        base[ox] = 0;
        yl_v[ox] = xl_v[ox] = 0;
        w00[ox] = w01[ox] = w10[ox] = w11[ox] = ly[ox] = lx[ox] = S(0);
        interior_all = false;
        continue;
      }
      const int64_t yl = static_cast<int64_t>(std::floor(y));
      const int64_t xl = static_cast<int64_t>(std::floor(x));
      const S fy = y - static_cast<S>(yl), fx = x - static_cast<S>(xl);
      const S hy = S(1) - fy, hx = S(1) - fx;
      base[ox] = yl * W + xl;
      yl_v[ox] = yl;
      xl_v[ox] = xl;
      w00[ox] = hy * hx;
      w01[ox] = hy * fx;
      w10[ox] = fy * hx;
      w11[ox] = fy * fx;
      ly[ox] = fy;
      lx[ox] = fx;
      const bool interior = yl >= 0 && yl + 1 < H && xl >= 0 && xl + 1 < W;
      flags[ox] = static_cast<uint8_t>(1 | (interior ? 2 : 0));
      if (!interior) interior_all = false;
    }
    all_interior = interior_all;
  }
};

// Masked bilinear sampling columns for one sample:
// cols[(ci*K + k) * span + pos] = mask[k,pos] * x(sample point).
template <typename S>
void deform_im2col(const S* input, int64_t Cin, int64_t H, int64_t W, const S* offsets,
                   const S* masks, const Conv2dAttrs& a, int64_t Ho, int64_t Wo, S* cols) {
  const int64_t K = a.kh * a.kw;
  const int64_t span = Ho * Wo;
  RowGeom<S> geom;
  geom.resize(Wo);
  for (int64_t k = 0; k < K; ++k) {
    const int64_t ki = k / a.kw, kj = k % a.kw;
    const S* off_y = offsets + (2 * k) * span;
    const S* off_x = offsets + (2 * k + 1) * span;
    const S* m = masks + k * span;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      geom.compute(oy, ki, kj, a, off_y, off_x, Wo, H, W);
      const int64_t row = oy * Wo;
      const S* mrow = m + row;
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const S* plane = input + ci * H * W;
        S* dst = cols + (ci * K + k) * span + row;
        if (geom.all_interior) {
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const S* p = plane + geom.base[ox];
            dst[ox] = mrow[ox] * (geom.w00[ox] * p[0] + geom.w01[ox] * p[1] +
                                  geom.w10[ox] * p[W] + geom.w11[ox] * p[W + 1]);
          }
          continue;
        }
        for (int64_t ox = 0; ox < Wo; ++ox) {
          const uint8_t f = geom.flags[ox];
          if (!(f & 1)) {
            dst[ox] = S(0);
            continue;
          }
          if (f & 2) {
            const S* p = plane + geom.base[ox];
            dst[ox] = mrow[ox] * (geom.w00[ox] * p[0] + geom.w01[ox] * p[1] +
                                  geom.w10[ox] * p[W] + geom.w11[ox] * p[W + 1]);
            continue;
          }
          const int64_t yl = geom.yl_v[ox];
          const int64_t xl = geom.xl_v[ox];
          S v = 0;
          if (yl >= 0) {
            if (xl >= 0 && xl < W) v += geom.w00[ox] * plane[yl * W + xl];
            if (xl + 1 >= 0 && xl + 1 < W) v += geom.w01[ox] * plane[yl * W + xl + 1];
          }
          if (yl + 1 >= 0 && yl + 1 < H) {
            if (xl >= 0 && xl < W) v += geom.w10[ox] * plane[(yl + 1) * W + xl];
            if (xl + 1 >= 0 && xl + 1 < W) v += geom.w11[ox] * plane[(yl + 1) * W + xl + 1];
          }
          dst[ox] = mrow[ox] * v;
        }
      }
    }
  }
}

}  // namespace detail

/// Modulated deformable convolution: each kernel tap samples the input at its
/// grid position displaced by a learned fractional offset, scaled by a
/// modulation mask, using bilinear interpolation. Gradients are registered
/// for input, weight, offsets, and masks; the rules are fused kernels, so
/// no second-order graph can be built through this op.
template <typename S>
Tensor<S> deform_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                        const DeformParams<S>& params, Conv2dAttrs attrs) {
  detail::require_4d(x, "deform_conv2d");
  detail::require_4d(w, "deform_conv2d weight");
  if (x.dim(1) != w.dim(1)) throw DimensionError("deform_conv2d: input/weight channel mismatch");
  if (w.dim(2) != attrs.kh || w.dim(3) != attrs.kw)
    throw DimensionError("deform_conv2d: weight extents do not match kernel attributes");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0);
  const int64_t K = attrs.kh * attrs.kw;
  const int64_t Ho =
      detail::conv_extent(H, attrs.kh, attrs.stride, attrs.pad, attrs.dilation, "deform_conv2d");
  const int64_t Wo =
      detail::conv_extent(W, attrs.kw, attrs.stride, attrs.pad, attrs.dilation, "deform_conv2d");

  const Tensor<S>& off = params.offsets;
  const Tensor<S>& msk = params.masks;
  detail::require_4d(off, "deform_conv2d offsets");
  detail::require_4d(msk, "deform_conv2d masks");
  if (off.dim(0) != B || off.dim(1) != 2 * K || off.dim(2) != Ho || off.dim(3) != Wo)
    throw DimensionError("deform_conv2d: offsets must be [B," + std::to_string(2 * K) + "," +
                         std::to_string(Ho) + "," + std::to_string(Wo) + "], got " +
                         shape_str(off.shape()));
  if (msk.dim(0) != B || msk.dim(1) != K || msk.dim(2) != Ho || msk.dim(3) != Wo)
    throw DimensionError("deform_conv2d: masks must be [B," + std::to_string(K) + "," +
                         std::to_string(Ho) + "," + std::to_string(Wo) + "], got " +
                         shape_str(msk.shape()));

  const int64_t span = Ho * Wo;
  // Keep the sampled columns for the weight gradient when a backward pass
  // can happen; inference skips the cache.
  const bool keep_cols = grad_enabled() && (x.requires_grad() || w.requires_grad() ||
                                            off.requires_grad() || msk.requires_grad());
  auto cols_cache = std::make_shared<std::vector<Vec<S>>>(keep_cols ? B : 0);
  Vec<S> out(static_cast<size_t>(B * Cout * span));
  ThreadPool::global().parallel_for(B, [&](int64_t b) {
    S* cols;
    if (keep_cols) {
      (*cols_cache)[static_cast<size_t>(b)].resize(static_cast<size_t>(Cin * K * span));
      cols = (*cols_cache)[static_cast<size_t>(b)].data();
    } else {
      cols = detail::scratch_buffer<S>(0, static_cast<size_t>(Cin * K * span));
    }
    detail::deform_im2col(x.data() + b * Cin * H * W, Cin, H, W, off.data() + b * 2 * K * span,
                          msk.data() + b * K * span, attrs, Ho, Wo, cols);
    detail::gemm_nn(out.data() + b * Cout * span, w.data(), cols, Cout, Cin * K, span);
  });

  auto backward_rule = [x, w, off, msk, cols_cache, attrs, H, W, Ho, Wo, K](const Tensor<S>& g) {
    const int64_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
    const int64_t span = Ho * Wo;
    Vec<S> dx(static_cast<size_t>(B * Cin * H * W), S(0));
    Vec<S> doff(static_cast<size_t>(B * 2 * K * span), S(0));
    Vec<S> dmsk(static_cast<size_t>(B * K * span), S(0));
    std::vector<Vec<S>> dw_partial(static_cast<size_t>(B));

    ThreadPool::global().parallel_for(B, [&](int64_t b) {
      const S* input = x.data() + b * Cin * H * W;
      const S* offsets = off.data() + b * 2 * K * span;
      const S* masks = msk.data() + b * K * span;
      const S* gy = g.data() + b * Cout * span;

      // dW via the masked columns kept from the forward pass.
      const S* cols;
      if (!cols_cache->empty()) {
        cols = (*cols_cache)[static_cast<size_t>(b)].data();
      } else {
        S* scratch = detail::scratch_buffer<S>(0, static_cast<size_t>(Cin * K * span));
        detail::deform_im2col(input, Cin, H, W, offsets, masks, attrs, Ho, Wo, scratch);
        cols = scratch;
      }
      dw_partial[static_cast<size_t>(b)].resize(static_cast<size_t>(Cout * Cin * K));
      detail::gemm_nt(dw_partial[static_cast<size_t>(b)].data(), gy, cols, Cout, span, Cin * K);

      // dcols = W^T * gy, then walk the sampling geometry once more for the
      // input / offset / mask gradients.
      S* dcols = detail::scratch_buffer<S>(1, static_cast<size_t>(Cin * K * span));
      detail::gemm_tn(dcols, w.data(), gy, Cin * K, Cout, span);

      S* dxp = dx.data() + b * Cin * H * W;
      S* doffp = doff.data() + b * 2 * K * span;
      S* dmskp = dmsk.data() + b * K * span;
      detail::RowGeom<S> geom;
      geom.resize(Wo);
      for (int64_t k = 0; k < K; ++k) {
        const int64_t ki = k / attrs.kw, kj = k % attrs.kw;
        const S* off_y = offsets + (2 * k) * span;
        const S* off_x = offsets + (2 * k + 1) * span;
        const S* m = masks + k * span;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          geom.compute(oy, ki, kj, attrs, off_y, off_x, Wo, H, W);
          const int64_t row = oy * Wo;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            if (!(geom.flags[ox] & 1)) continue;
            const int64_t pos = row + ox;
            const S mk = m[pos];
            const int64_t yl = geom.yl_v[ox];
            const int64_t xl = geom.xl_v[ox];
            const bool interior = (geom.flags[ox] & 2) != 0;
            const bool v00ok = interior || (yl >= 0 && xl >= 0 && xl < W);
            const bool v01ok = interior || (yl >= 0 && xl + 1 >= 0 && xl + 1 < W);
            const bool v10ok = interior || (yl + 1 >= 0 && yl + 1 < H && xl >= 0 && xl < W);
            const bool v11ok = interior || (yl + 1 >= 0 && yl + 1 < H && xl + 1 >= 0 && xl + 1 < W);
            S dy_acc = 0, dx_acc = 0, dm_acc = 0;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const S* plane = input + ci * H * W;
              S* dplane = dxp + ci * H * W;
              const S p00 = v00ok ? plane[yl * W + xl] : S(0);
              const S p01 = v01ok ? plane[yl * W + xl + 1] : S(0);
              const S p10 = v10ok ? plane[(yl + 1) * W + xl] : S(0);
              const S p11 = v11ok ? plane[(yl + 1) * W + xl + 1] : S(0);
              const S dc = dcols[(ci * K + k) * span + pos];
              dm_acc += dc * (geom.w00[ox] * p00 + geom.w01[ox] * p01 + geom.w10[ox] * p10 +
                              geom.w11[ox] * p11);
              const S dv = dc * mk;
              if (v00ok) dplane[yl * W + xl] += dv * geom.w00[ox];
              if (v01ok) dplane[yl * W + xl + 1] += dv * geom.w01[ox];
              if (v10ok) dplane[(yl + 1) * W + xl] += dv * geom.w10[ox];
              if (v11ok) dplane[(yl + 1) * W + xl + 1] += dv * geom.w11[ox];
              dy_acc += dv * ((S(1) - geom.lx[ox]) * (p10 - p00) + geom.lx[ox] * (p11 - p01));
              dx_acc += dv * ((S(1) - geom.ly[ox]) * (p01 - p00) + geom.ly[ox] * (p11 - p10));
            }
            doffp[(2 * k) * span + pos] = dy_acc;
            doffp[(2 * k + 1) * span + pos] = dx_acc;
            dmskp[k * span + pos] = dm_acc;
          }
        }
      }
    });

    Vec<S> dw(static_cast<size_t>(Cout * Cin * K), S(0));
    for (int64_t b = 0; b < B; ++b)
      for (size_t i = 0; i < dw.size(); ++i) dw[i] += dw_partial[static_cast<size_t>(b)][i];

    return std::vector<Tensor<S>>{
        Tensor<S>::from_values(x.shape(), std::move(dx)),
        Tensor<S>::from_values(w.shape(), std::move(dw)),
        Tensor<S>::from_values(off.shape(), std::move(doff)),
        Tensor<S>::from_values(msk.shape(), std::move(dmsk))};
  };

  Tensor<S> y = Tensor<S>::make_op({B, Cout, Ho, Wo}, std::move(out), {x, w, off, msk},
                                   std::move(backward_rule), /*grad_graph_ok=*/false);
  if (!bias.defined()) return y;
  if (bias.rank() != 1 || bias.dim(0) != Cout)
    throw DimensionError("deform_conv2d: bias length does not match Cout");
  return add(y, bcast_channel(bias, B, Ho, Wo));
}

template <typename S>
Tensor<S> deform_conv2d(const Tensor<S>& x, const Tensor<S>& w, const DeformParams<S>& params,
                        Conv2dAttrs attrs) {
  return deform_conv2d(x, w, Tensor<S>(), params, attrs);
}

}  // namespace dgf
