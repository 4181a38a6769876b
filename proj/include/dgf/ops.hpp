#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "dgf/tensor.hpp"
#include "dgf/thread_pool.hpp"

namespace dgf {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Chunked data-parallel loop over [0, n). Chunk boundaries are fixed, so
// results are identical for any worker count.
constexpr int64_t kChunk = 1 << 16;

template <typename F>
void parallel_chunks(int64_t n, F&& fn) {
  if (n <= kChunk || ThreadPool::global().workers() == 1) {
    fn(int64_t{0}, n);
    return;
  }
  const int64_t chunks = (n + kChunk - 1) / kChunk;
  ThreadPool::global().parallel_for(chunks, [&](int64_t c) {
    fn(c * kChunk, std::min(n, (c + 1) * kChunk));
  });
}

template <typename S, typename F>
Vec<S> map1(const Tensor<S>& a, F&& f) {
  Vec<S> out(a.values().size());
  const S* av = a.data();
  parallel_chunks(static_cast<int64_t>(out.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) out[i] = f(av[i]);
  });
  return out;
}

template <typename S, typename F>
Vec<S> map2(const Tensor<S>& a, const Tensor<S>& b, F&& f) {
  Vec<S> out(a.values().size());
  const S* av = a.data();
  const S* bv = b.data();
  parallel_chunks(static_cast<int64_t>(out.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) out[i] = f(av[i], bv[i]);
  });
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  return Tensor<S>::make_op(a.shape(), detail::map2(a, b, [](S x, S y) { return x + y; }), {a, b},
                            [](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{g, g};
                            });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  return Tensor<S>::make_op(a.shape(), detail::map2(a, b, [](S x, S y) { return x - y; }), {a, b},
                            [](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{g, neg(g)};
                            });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  return Tensor<S>::make_op(a.shape(), detail::map2(a, b, [](S x, S y) { return x * y; }), {a, b},
                            [a, b](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{mul(g, b), mul(g, a)};
                            });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return Tensor<S>::make_op(a.shape(), detail::map1(a, [](S x) { return -x; }), {a},
                            [](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{neg(g)};
                            });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  return Tensor<S>::make_op(a.shape(), detail::map1(a, [c](S x) { return x * c; }), {a},
                            [c](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{mul_scalar(g, c)};
                            });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return Tensor<S>::make_op(a.shape(), detail::map1(a, [c](S x) { return x + c; }), {a},
                            [](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{g};
                            });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S c) { return mul_scalar(a, c); }
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return mul_scalar(a, c); }

// mask-based ops: the backward multiplies by a plain value tensor derived
// from the input, constant under differentiation (exact almost everywhere)

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return Tensor<S>::make_op(x.shape(), detail::map1(x, [](S v) { return v > S(0) ? v : S(0); }),
                            {x}, [x](const Tensor<S>& g) {
                              auto m = Tensor<S>::from_values(
                                  x.shape(), detail::map1(x, [](S v) { return v > S(0) ? S(1) : S(0); }));
                              return std::vector<Tensor<S>>{mul(g, m)};
                            });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
  return Tensor<S>::make_op(
      x.shape(), detail::map1(x, [slope](S v) { return v > S(0) ? v : slope * v; }), {x},
      [x, slope](const Tensor<S>& g) {
        auto m = Tensor<S>::from_values(
            x.shape(), detail::map1(x, [slope](S v) { return v > S(0) ? S(1) : slope; }));
        return std::vector<Tensor<S>>{mul(g, m)};
      });
}

template <typename S>
Tensor<S> abs_val(const Tensor<S>& x) {
  return Tensor<S>::make_op(x.shape(), detail::map1(x, [](S v) { return std::abs(v); }), {x},
                            [x](const Tensor<S>& g) {
                              auto m = Tensor<S>::from_values(
                                  x.shape(), detail::map1(x, [](S v) {
                                    return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
                                  }));
                              return std::vector<Tensor<S>>{mul(g, m)};
                            });
}

// smooth unaries recompute their forward inside the backward rule, which
// keeps rules composable to any derivative order without self-references

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& x) {
  return Tensor<S>::make_op(x.shape(), detail::map1(x, [](S v) { return std::tanh(v); }), {x},
                            [x](const Tensor<S>& g) {
                              Tensor<S> y = tanh_op(x);
                              Tensor<S> one = Tensor<S>::full(x.shape(), S(1));
                              return std::vector<Tensor<S>>{mul(g, sub(one, mul(y, y)))};
                            });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return Tensor<S>::make_op(
      x.shape(), detail::map1(x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }), {x},
      [x](const Tensor<S>& g) {
        Tensor<S> y = sigmoid(x);
        Tensor<S> one = Tensor<S>::full(x.shape(), S(1));
        return std::vector<Tensor<S>>{mul(g, mul(y, sub(one, y)))};
      });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return Tensor<S>::make_op(x.shape(), detail::map1(x, [](S v) {
                              if (v > S(20)) return v;
                              return v < S(-20) ? std::exp(v) : std::log1p(std::exp(v));
                            }),
                            {x}, [x](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{mul(g, sigmoid(x))};
                            });
}

/// 1/sqrt(x); domain x > 0.
template <typename S>
Tensor<S> rsqrt(const Tensor<S>& x) {
  return Tensor<S>::make_op(x.shape(), detail::map1(x, [](S v) { return S(1) / std::sqrt(v); }),
                            {x}, [x](const Tensor<S>& g) {
                              Tensor<S> r = rsqrt(x);
                              return std::vector<Tensor<S>>{
                                  mul_scalar(mul(g, mul(r, mul(r, r))), S(-0.5))};
                            });
}

enum class Activation { kRelu, kLeakyRelu, kTanh, kSigmoid };

template <typename S>
Tensor<S> activation(const Tensor<S>& x, Activation kind, S slope = S(0.2)) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kLeakyRelu: return leaky_relu(x, slope);
    case Activation::kTanh: return tanh_op(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  throw UsageError("unknown activation kind");
}

// ---------------------------------------------------------------------------
// reductions and broadcasts (adjoint pairs)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> bcast_all(const Tensor<S>& s, const Shape& shape);

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.values()) acc += v;
  Shape xshape = x.shape();
  return Tensor<S>::make_op({1}, {acc}, {x}, [xshape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{bcast_all(g, xshape)};
  });
}

template <typename S>
Tensor<S> bcast_all(const Tensor<S>& s, const Shape& shape) {
  if (s.numel() != 1) throw DimensionError("bcast_all expects a scalar");
  Vec<S> out(static_cast<size_t>(numel_of(shape)), s.values()[0]);
  return Tensor<S>::make_op(shape, std::move(out), {s}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{sum_all(g)};
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return mul_scalar(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

namespace detail {
template <typename S>
void require_4d(const Tensor<S>& x, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + ": expected 4-D tensor, got " + shape_str(x.shape()));
}
}  // namespace detail

template <typename S>
Tensor<S> bcast_plane(const Tensor<S>& x, int64_t H, int64_t W);

/// [B,C,H,W] -> [B,C], summing each spatial plane.
template <typename S>
Tensor<S> plane_sum(const Tensor<S>& x) {
  detail::require_4d(x, "plane_sum");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Vec<S> out(static_cast<size_t>(B * C), S(0));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    S acc = 0;
    const S* src = xv + p * H * W;
    for (int64_t i = 0; i < H * W; ++i) acc += src[i];
    out[static_cast<size_t>(p)] = acc;
  });
  return Tensor<S>::make_op({B, C}, std::move(out), {x}, [H, W](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{bcast_plane(g, H, W)};
  });
}

/// [B,C] -> [B,C,H,W], replicating over the plane.
template <typename S>
Tensor<S> bcast_plane(const Tensor<S>& x, int64_t H, int64_t W) {
  if (x.rank() != 2) throw DimensionError("bcast_plane expects [B,C], got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1);
  Vec<S> out(static_cast<size_t>(B * C * H * W));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    std::fill_n(out.data() + p * H * W, H * W, xv[p]);
  });
  return Tensor<S>::make_op({B, C, H, W}, std::move(out), {x}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{plane_sum(g)};
  });
}

template <typename S>
Tensor<S> plane_mean(const Tensor<S>& x) {
  return mul_scalar(plane_sum(x), S(1) / static_cast<S>(x.dim(2) * x.dim(3)));
}

template <typename S>
Tensor<S> bcast_channel(const Tensor<S>& x, int64_t B, int64_t H, int64_t W);

/// [B,C,H,W] -> [C], summing over batch and space.
template <typename S>
Tensor<S> channel_sum(const Tensor<S>& x) {
  detail::require_4d(x, "channel_sum");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Vec<S> per_plane(static_cast<size_t>(B * C));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    S acc = 0;
    const S* src = xv + p * H * W;
    for (int64_t i = 0; i < H * W; ++i) acc += src[i];
    per_plane[static_cast<size_t>(p)] = acc;
  });
  Vec<S> out(static_cast<size_t>(C), S(0));
  for (int64_t b = 0; b < B; ++b)  // fixed order for determinism
    for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>(c)] += per_plane[b * C + c];
  return Tensor<S>::make_op({C}, std::move(out), {x}, [B, H, W](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{bcast_channel(g, B, H, W)};
  });
}

/// [C] -> [B,C,H,W].
template <typename S>
Tensor<S> bcast_channel(const Tensor<S>& x, int64_t B, int64_t H, int64_t W) {
  if (x.rank() != 1) throw DimensionError("bcast_channel expects [C], got " + shape_str(x.shape()));
  const int64_t C = x.dim(0);
  Vec<S> out(static_cast<size_t>(B * C * H * W));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    std::fill_n(out.data() + p * H * W, H * W, xv[p % C]);
  });
  return Tensor<S>::make_op({B, C, H, W}, std::move(out), {x}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{channel_sum(g)};
  });
}

template <typename S>
Tensor<S> channel_mean(const Tensor<S>& x) {
  return mul_scalar(channel_sum(x), S(1) / static_cast<S>(x.dim(0) * x.dim(2) * x.dim(3)));
}

template <typename S>
Tensor<S> bcast_rows(const Tensor<S>& x, int64_t B);

/// [B,M] -> [M], summing over rows.
template <typename S>
Tensor<S> col_sum(const Tensor<S>& x) {
  if (x.rank() != 2) throw DimensionError("col_sum expects [B,M], got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), M = x.dim(1);
  Vec<S> out(static_cast<size_t>(M), S(0));
  const S* xv = x.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m) out[static_cast<size_t>(m)] += xv[b * M + m];
  return Tensor<S>::make_op({M}, std::move(out), {x}, [B](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{bcast_rows(g, B)};
  });
}

/// [M] -> [B,M].
template <typename S>
Tensor<S> bcast_rows(const Tensor<S>& x, int64_t B) {
  if (x.rank() != 1) throw DimensionError("bcast_rows expects [M], got " + shape_str(x.shape()));
  const int64_t M = x.dim(0);
  Vec<S> out(static_cast<size_t>(B * M));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m) out[static_cast<size_t>(b * M + m)] = x.values()[static_cast<size_t>(m)];
  return Tensor<S>::make_op({B, M}, std::move(out), {x}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{col_sum(g)};
  });
}

/// Free reshape (same element count, same linear order).
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw DimensionError("reshape to " + shape_str(shape) + " from " + shape_str(x.shape()));
  Shape old = x.shape();
  return Tensor<S>::make_op(std::move(shape), Vec<S>(x.values()), {x},
                            [old](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{reshape(g, old)};
                            });
}

// ---------------------------------------------------------------------------
// channel concat / slice (adjoint pair)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int64_t c0, int64_t c1);

template <typename S>
Tensor<S> embed_channels(const Tensor<S>& x, int64_t c0, int64_t c_total);

/// [B,Ca,H,W] + [B,Cb,H,W] -> [B,Ca+Cb,H,W].
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_4d(a, "concat_channels");
  detail::require_4d(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw DimensionError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Vec<S> out(static_cast<size_t>(B * (Ca + Cb) * H * W));
  const int64_t plane = H * W;
  for (int64_t bb = 0; bb < B; ++bb) {
    std::copy_n(a.data() + bb * Ca * plane, Ca * plane, out.data() + bb * (Ca + Cb) * plane);
    std::copy_n(b.data() + bb * Cb * plane, Cb * plane, out.data() + (bb * (Ca + Cb) + Ca) * plane);
  }
  return Tensor<S>::make_op({B, Ca + Cb, H, W}, std::move(out), {a, b}, [Ca, Cb](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{slice_channels(g, 0, Ca), slice_channels(g, Ca, Ca + Cb)};
  });
}

/// Channels [c0, c1) of x.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int64_t c0, int64_t c1) {
  detail::require_4d(x, "slice_channels");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 < c0 || c1 > C) throw DimensionError("slice_channels: bad range");
  const int64_t Cs = c1 - c0, plane = H * W;
  Vec<S> out(static_cast<size_t>(B * Cs * plane));
  for (int64_t b = 0; b < B; ++b)
    std::copy_n(x.data() + (b * C + c0) * plane, Cs * plane, out.data() + b * Cs * plane);
  return Tensor<S>::make_op({B, Cs, H, W}, std::move(out), {x}, [c0, C](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{embed_channels(g, c0, C)};
  });
}

/// Places x at channel offset c0 inside a zero tensor with c_total channels.
template <typename S>
Tensor<S> embed_channels(const Tensor<S>& x, int64_t c0, int64_t c_total) {
  detail::require_4d(x, "embed_channels");
  const int64_t B = x.dim(0), Cs = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c0 + Cs > c_total) throw DimensionError("embed_channels: bad range");
  const int64_t plane = H * W;
  Vec<S> out(static_cast<size_t>(B * c_total * plane), S(0));
  for (int64_t b = 0; b < B; ++b)
    std::copy_n(x.data() + b * Cs * plane, Cs * plane, out.data() + (b * c_total + c0) * plane);
  return Tensor<S>::make_op({B, c_total, H, W}, std::move(out), {x}, [c0, Cs](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{slice_channels(g, c0, c0 + Cs)};
  });
}

// ---------------------------------------------------------------------------
// per-row gather / scatter (adjoint pair), for style-indexed logits
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> put_per_row(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx, int64_t M);

/// out[b] = x[b, idx[b]] for x of shape [B,M].
template <typename S>
Tensor<S> take_per_row(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx) {
  if (x.rank() != 2) throw DimensionError("take_per_row expects [B,M]");
  const int64_t B = x.dim(0), M = x.dim(1);
  if (static_cast<int64_t>(idx->size()) != B) throw DimensionError("take_per_row: index count mismatch");
  Vec<S> out(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const int64_t j = (*idx)[static_cast<size_t>(b)];
    if (j < 0 || j >= M) throw DimensionError("take_per_row: index out of range");
    out[static_cast<size_t>(b)] = x.values()[static_cast<size_t>(b * M + j)];
  }
  return Tensor<S>::make_op({B}, std::move(out), {x}, [idx, M](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{put_per_row(g, idx, M)};
  });
}

/// out[b, idx[b]] = x[b], zeros elsewhere; x of shape [B].
template <typename S>
Tensor<S> put_per_row(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx, int64_t M) {
  if (x.rank() != 1) throw DimensionError("put_per_row expects [B]");
  const int64_t B = x.dim(0);
  Vec<S> out(static_cast<size_t>(B * M), S(0));
  for (int64_t b = 0; b < B; ++b)
    out[static_cast<size_t>(b * M + (*idx)[static_cast<size_t>(b)])] = x.values()[static_cast<size_t>(b)];
  return Tensor<S>::make_op({B, M}, std::move(out), {x}, [idx](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{take_per_row(g, idx)};
  });
}

// ---------------------------------------------------------------------------
// nearest upsample / block sum (adjoint pair)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> block_sum(const Tensor<S>& x, int64_t factor);

/// Replicates each pixel factor x factor.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int64_t factor) {
  detail::require_4d(x, "upsample_nearest");
  if (factor < 1) throw DimensionError("upsample_nearest: factor must be >= 1");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * factor, Wo = W * factor;
  Vec<S> out(static_cast<size_t>(B * C * Ho * Wo));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    const S* src = xv + p * H * W;
    S* dst = out.data() + p * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y) {
      const S* row = src + (y / factor) * W;
      for (int64_t xw = 0; xw < Wo; ++xw) dst[y * Wo + xw] = row[xw / factor];
    }
  });
  return Tensor<S>::make_op({B, C, Ho, Wo}, std::move(out), {x}, [factor](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{block_sum(g, factor)};
  });
}

/// Sums non-overlapping factor x factor blocks (adjoint of upsample_nearest).
template <typename S>
Tensor<S> block_sum(const Tensor<S>& x, int64_t factor) {
  detail::require_4d(x, "block_sum");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor || W % factor) throw DimensionError("block_sum: extent not divisible by factor");
  const int64_t Ho = H / factor, Wo = W / factor;
  Vec<S> out(static_cast<size_t>(B * C * Ho * Wo), S(0));
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    const S* src = xv + p * H * W;
    S* dst = out.data() + p * Ho * Wo;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xw = 0; xw < W; ++xw) dst[(y / factor) * Wo + xw / factor] += src[y * W + xw];
  });
  return Tensor<S>::make_op({B, C, Ho, Wo}, std::move(out), {x}, [factor](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{upsample_nearest(g, factor)};
  });
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

struct Pool2dAttrs {
  int64_t kernel = 2;
  int64_t stride = 2;
  int64_t pad = 0;
};

enum class PoolMode { kMax, kAvg };

namespace detail {
inline int64_t pooled_extent(int64_t in, const Pool2dAttrs& a, const char* op) {
  if (a.kernel > in + 2 * a.pad)
    throw DimensionError(std::string(op) + ": window larger than padded input");
  const int64_t out = (in + 2 * a.pad - a.kernel) / a.stride + 1;
  require(out >= 1, std::string(op) + ": empty output");
  return out;
}
}  // namespace detail

template <typename S>
Tensor<S> avg_unpool2d(const Tensor<S>& g, Pool2dAttrs attrs, int64_t H, int64_t W);

/// Mean over each window; padded positions count as zeros in the mean.
template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Pool2dAttrs attrs) {
  detail::require_4d(x, "avg_pool2d");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = detail::pooled_extent(H, attrs, "avg_pool2d");
  const int64_t Wo = detail::pooled_extent(W, attrs, "avg_pool2d");
  Vec<S> out(static_cast<size_t>(B * C * Ho * Wo), S(0));
  const S inv = S(1) / static_cast<S>(attrs.kernel * attrs.kernel);
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    const S* src = xv + p * H * W;
    S* dst = out.data() + p * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        S acc = 0;
        for (int64_t i = 0; i < attrs.kernel; ++i) {
          const int64_t y = oy * attrs.stride - attrs.pad + i;
          if (y < 0 || y >= H) continue;
          for (int64_t j = 0; j < attrs.kernel; ++j) {
            const int64_t xw = ox * attrs.stride - attrs.pad + j;
            if (xw < 0 || xw >= W) continue;
            acc += src[y * W + xw];
          }
        }
        dst[oy * Wo + ox] = acc * inv;
      }
  });
  return Tensor<S>::make_op({B, C, Ho, Wo}, std::move(out), {x}, [attrs, H, W](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{avg_unpool2d(g, attrs, H, W)};
  });
}

/// Adjoint of avg_pool2d: distributes each pooled gradient uniformly.
template <typename S>
Tensor<S> avg_unpool2d(const Tensor<S>& g, Pool2dAttrs attrs, int64_t H, int64_t W) {
  detail::require_4d(g, "avg_unpool2d");
  const int64_t B = g.dim(0), C = g.dim(1), Ho = g.dim(2), Wo = g.dim(3);
  Vec<S> out(static_cast<size_t>(B * C * H * W), S(0));
  const S inv = S(1) / static_cast<S>(attrs.kernel * attrs.kernel);
  const S* gv = g.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    const S* src = gv + p * Ho * Wo;
    S* dst = out.data() + p * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const S v = src[oy * Wo + ox] * inv;
        for (int64_t i = 0; i < attrs.kernel; ++i) {
          const int64_t y = oy * attrs.stride - attrs.pad + i;
          if (y < 0 || y >= H) continue;
          for (int64_t j = 0; j < attrs.kernel; ++j) {
            const int64_t xw = ox * attrs.stride - attrs.pad + j;
            if (xw < 0 || xw >= W) continue;
            dst[y * W + xw] += v;
          }
        }
      }
  });
  return Tensor<S>::make_op({B, C, H, W}, std::move(out), {g}, [attrs](const Tensor<S>& gg) {
    return std::vector<Tensor<S>>{avg_pool2d(gg, attrs)};
  });
}

template <typename S>
Tensor<S> scatter_flat(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx, Shape shape);

/// out[i] = x[idx[i]]; adjoint pair with scatter_flat.
template <typename S>
Tensor<S> gather_flat(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx, Shape shape) {
  Vec<S> out(idx->size());
  for (size_t i = 0; i < idx->size(); ++i) out[i] = x.values()[static_cast<size_t>((*idx)[i])];
  Shape xshape = x.shape();
  return Tensor<S>::make_op(std::move(shape), std::move(out), {x}, [idx, xshape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{scatter_flat(g, idx, xshape)};
  });
}

/// out[idx[i]] += x[i] into a zero tensor of the given shape.
template <typename S>
Tensor<S> scatter_flat(const Tensor<S>& x, std::shared_ptr<const std::vector<int64_t>> idx, Shape shape) {
  Vec<S> out(static_cast<size_t>(numel_of(shape)), S(0));
  for (size_t i = 0; i < idx->size(); ++i) out[static_cast<size_t>((*idx)[i])] += x.values()[i];
  Shape xshape = x.shape();
  return Tensor<S>::make_op(std::move(shape), std::move(out), {x}, [idx, xshape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{gather_flat(g, idx, xshape)};
  });
}

/// Max over each window; gradient routes to the first maximal element in
/// row-major window order.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Pool2dAttrs attrs) {
  detail::require_4d(x, "max_pool2d");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = detail::pooled_extent(H, attrs, "max_pool2d");
  const int64_t Wo = detail::pooled_extent(W, attrs, "max_pool2d");
  Vec<S> out(static_cast<size_t>(B * C * Ho * Wo));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const S* xv = x.data();
  ThreadPool::global().parallel_for(B * C, [&](int64_t p) {
    const S* src = xv + p * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        S best = -std::numeric_limits<S>::infinity();
        int64_t best_idx = -1;
        for (int64_t i = 0; i < attrs.kernel; ++i) {
          const int64_t y = oy * attrs.stride - attrs.pad + i;
          if (y < 0 || y >= H) continue;
          for (int64_t j = 0; j < attrs.kernel; ++j) {
            const int64_t xw = ox * attrs.stride - attrs.pad + j;
            if (xw < 0 || xw >= W) continue;
            const S v = src[y * W + xw];
            if (v > best) {
              best = v;
              best_idx = p * H * W + y * W + xw;
            }
          }
        }
        const size_t o = static_cast<size_t>((p * Ho + oy) * Wo + ox);
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
  });
  Shape xshape = x.shape();
  Shape oshape{B, C, Ho, Wo};
  return Tensor<S>::make_op(oshape, std::move(out), {x},
                            [argmax, xshape](const Tensor<S>& g) {
                              return std::vector<Tensor<S>>{scatter_flat(g, argmax, xshape)};
                            });
}

template <typename S>
Tensor<S> pool2d(const Tensor<S>& x, PoolMode mode, Pool2dAttrs attrs) {
  return mode == PoolMode::kMax ? max_pool2d(x, attrs) : avg_pool2d(x, attrs);
}

/// [B,C,H,W] -> [B,C] global spatial average.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  return plane_mean(x);
}

}  // namespace dgf
