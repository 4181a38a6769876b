#pragma once

#include <type_traits>
#include <vector>

#include "dgf/ops.hpp"

namespace dgf {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kInEps = 1e-5;
inline constexpr double kAdainEps = 1e-5;
inline constexpr double kFrnEps = 1e-6;

/// Exponential running statistics for batch normalization (inference path).
template <typename S>
struct RunningStats {
  std::vector<S> mean;
  std::vector<S> var;
  S momentum = S(0.1);
};

/// Per-channel batch normalization over (B,H,W). Training mode normalizes by
/// batch statistics and folds them into the running estimates (unbiased
/// variance, as is conventional); inference mode uses the running estimates.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     std::type_identity_t<RunningStats<S>>* stats, bool training,
                     S eps = S(kBnEps)) {
  detail::require_4d(x, "batch_norm");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw DimensionError("batch_norm: affine parameters do not match channel count");
  Tensor<S> y;
  if (training) {
    Tensor<S> mu = channel_mean(x);
    Tensor<S> xc = sub(x, bcast_channel(mu, B, H, W));
    Tensor<S> var = channel_mean(mul(xc, xc));
    y = mul(xc, bcast_channel(rsqrt(add_scalar(var, eps)), B, H, W));
    if (stats) {
      const int64_t n = B * H * W;
      const S unbias = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
      if (stats->mean.empty()) stats->mean.assign(static_cast<size_t>(C), S(0));
      if (stats->var.empty()) stats->var.assign(static_cast<size_t>(C), S(1));
      for (int64_t c = 0; c < C; ++c) {
        stats->mean[c] = (S(1) - stats->momentum) * stats->mean[c] + stats->momentum * mu.values()[c];
        stats->var[c] =
            (S(1) - stats->momentum) * stats->var[c] + stats->momentum * var.values()[c] * unbias;
      }
    }
  } else {
    if (!stats || stats->mean.empty())
      throw UsageError("batch_norm inference requires populated running statistics");
    Tensor<S> mu = Tensor<S>::from_values({C}, Vec<S>(stats->mean.begin(), stats->mean.end()));
    Vec<S> inv(stats->var.size());
    for (size_t c = 0; c < inv.size(); ++c) inv[c] = S(1) / std::sqrt(stats->var[c] + eps);
    Tensor<S> scale = Tensor<S>::from_values({C}, std::move(inv));
    y = mul(sub(x, bcast_channel(mu, B, H, W)), bcast_channel(scale, B, H, W));
  }
  return add(mul(y, bcast_channel(gamma, B, H, W)), bcast_channel(beta, B, H, W));
}

namespace detail {

// Per-(sample, channel) mean and inverse deviation, two-pass.
template <typename S>
void plane_stats(const S* x, int64_t planes, int64_t n, S eps, S* mu, S* r) {
  ThreadPool::global().parallel_for(planes, [&](int64_t p) {
    const S* src = x + p * n;
    S acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += src[i];
    const S m = acc / static_cast<S>(n);
    S acc2 = 0;
    for (int64_t i = 0; i < n; ++i) {
      const S d = src[i] - m;
      acc2 += d * d;
    }
    mu[p] = m;
    r[p] = S(1) / std::sqrt(acc2 / static_cast<S>(n) + eps);
  });
}

}  // namespace detail

/// Per-(sample, channel) normalization over H*W with a channel affine.
/// Fused kernel; the backward rule produces terminal gradient values.
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                        S eps = S(kInEps)) {
  detail::require_4d(x, "instance_norm");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw DimensionError("instance_norm: affine parameters do not match channel count");
  const int64_t planes = B * C, n = H * W;
  auto mu = std::make_shared<std::vector<S>>(static_cast<size_t>(planes));
  auto r = std::make_shared<std::vector<S>>(static_cast<size_t>(planes));
  detail::plane_stats(x.data(), planes, n, eps, mu->data(), r->data());

  Vec<S> out(static_cast<size_t>(planes * n));
  const S* xv = x.data();
  const S* gv = gamma.data();
  const S* bv = beta.data();
  ThreadPool::global().parallel_for(planes, [&](int64_t p) {
    const S m = (*mu)[p], rr = (*r)[p];
    const S gc = gv[p % C], bc = bv[p % C];
    const S* src = xv + p * n;
    S* dst = out.data() + p * n;
    for (int64_t i = 0; i < n; ++i) dst[i] = (src[i] - m) * rr * gc + bc;
  });

  auto backward_rule = [x, gamma, mu, r, B, C, n](const Tensor<S>& g) {
    const int64_t planes = B * C;
    Vec<S> dx(static_cast<size_t>(planes * n));
    Vec<S> sg(static_cast<size_t>(planes)), sgx(static_cast<size_t>(planes));
    const S* xv = x.data();
    const S* gv = g.data();
    const S* gam = gamma.data();
    ThreadPool::global().parallel_for(planes, [&](int64_t p) {
      const S m = (*mu)[p], rr = (*r)[p];
      const S* xs = xv + p * n;
      const S* gs = gv + p * n;
      S a = 0, b2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        a += gs[i];
        b2 += gs[i] * (xs[i] - m) * rr;
      }
      sg[p] = a;
      sgx[p] = b2;
      const S gc = gam[p % C];
      const S mean_g = a / static_cast<S>(n);
      const S mean_gx = b2 / static_cast<S>(n);
      S* dst = dx.data() + p * n;
      for (int64_t i = 0; i < n; ++i) {
        const S xhat = (xs[i] - m) * rr;
        dst[i] = gc * rr * (gs[i] - mean_g - xhat * mean_gx);
      }
    });
    Vec<S> dgamma(static_cast<size_t>(C), S(0)), dbeta(static_cast<size_t>(C), S(0));
    for (int64_t p = 0; p < planes; ++p) {
      dgamma[static_cast<size_t>(p % C)] += sgx[p];
      dbeta[static_cast<size_t>(p % C)] += sg[p];
    }
    return std::vector<Tensor<S>>{Tensor<S>::from_values(x.shape(), std::move(dx)),
                                  Tensor<S>::from_values({C}, std::move(dgamma)),
                                  Tensor<S>::from_values({C}, std::move(dbeta))};
  };
  return Tensor<S>::make_op({B, C, H, W}, std::move(out), {x, gamma, beta},
                            std::move(backward_rule), /*grad_graph_ok=*/false);
}

/// Re-normalizes each content plane to zero mean / unit variance and applies
/// the given per-(sample, channel) statistics. Fused kernel; terminal
/// backward.
template <typename S>
Tensor<S> adain(const Tensor<S>& content, const Tensor<S>& style_mean, const Tensor<S>& style_std,
                S eps = S(kAdainEps)) {
  detail::require_4d(content, "adain");
  const int64_t B = content.dim(0), C = content.dim(1), H = content.dim(2), W = content.dim(3);
  if (style_mean.rank() != 2 || style_mean.dim(0) != B || style_mean.dim(1) != C)
    throw DimensionError("adain: style_mean must be [B,C]");
  if (style_std.shape() != style_mean.shape()) throw DimensionError("adain: style_std must be [B,C]");
  const int64_t planes = B * C, n = H * W;
  auto mu = std::make_shared<std::vector<S>>(static_cast<size_t>(planes));
  auto r = std::make_shared<std::vector<S>>(static_cast<size_t>(planes));
  detail::plane_stats(content.data(), planes, n, eps, mu->data(), r->data());

  Vec<S> out(static_cast<size_t>(planes * n));
  const S* xv = content.data();
  const S* mv = style_mean.data();
  const S* sv = style_std.data();
  ThreadPool::global().parallel_for(planes, [&](int64_t p) {
    const S m = (*mu)[p], rr = (*r)[p];
    const S sm = mv[p], ss = sv[p];
    const S* src = xv + p * n;
    S* dst = out.data() + p * n;
    for (int64_t i = 0; i < n; ++i) dst[i] = (src[i] - m) * rr * ss + sm;
  });

  auto backward_rule = [content, style_std, mu, r, B, C, n](const Tensor<S>& g) {
    const int64_t planes = B * C;
    Vec<S> dx(static_cast<size_t>(planes * n));
    Vec<S> dmean(static_cast<size_t>(planes)), dstd(static_cast<size_t>(planes));
    const S* xv = content.data();
    const S* gv = g.data();
    const S* sv = style_std.data();
    ThreadPool::global().parallel_for(planes, [&](int64_t p) {
      const S m = (*mu)[p], rr = (*r)[p];
      const S* xs = xv + p * n;
      const S* gs = gv + p * n;
      S a = 0, b2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        a += gs[i];
        b2 += gs[i] * (xs[i] - m) * rr;
      }
      dmean[p] = a;
      dstd[p] = b2;
      const S ss = sv[p];
      const S mean_g = a / static_cast<S>(n);
      const S mean_gx = b2 / static_cast<S>(n);
      S* dst = dx.data() + p * n;
      for (int64_t i = 0; i < n; ++i) {
        const S xhat = (xs[i] - m) * rr;
        dst[i] = ss * rr * (gs[i] - mean_g - xhat * mean_gx);
      }
    });
    return std::vector<Tensor<S>>{Tensor<S>::from_values(content.shape(), std::move(dx)),
                                  Tensor<S>::from_values({B, C}, std::move(dmean)),
                                  Tensor<S>::from_values({B, C}, std::move(dstd))};
  };
  return Tensor<S>::make_op({B, C, H, W}, std::move(out), {content, style_mean, style_std},
                            std::move(backward_rule), /*grad_graph_ok=*/false);
}

/// Filter response normalization: divides each (sample, channel) plane by the
/// root of its mean squared activation, then applies the channel affine.
/// Composed from differentiable primitives so second-order gradients (R1)
/// flow through it.
template <typename S>
Tensor<S> frn(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(kFrnEps)) {
  detail::require_4d(x, "frn");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw DimensionError("frn: affine parameters do not match channel count");
  Tensor<S> nu = plane_mean(mul(x, x));
  Tensor<S> y = mul(x, bcast_plane(rsqrt(add_scalar(nu, eps)), H, W));
  return add(mul(y, bcast_channel(gamma, B, H, W)), bcast_channel(beta, B, H, W));
}

}  // namespace dgf
