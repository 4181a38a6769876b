#pragma once

// Brute-force reference implementations used to pin expected values. These
// deliberately share no code with the library kernels: plain nested loops
// over the textbook definitions.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

struct Shape4 {
  int64_t b, c, h, w;
  int64_t numel() const { return b * c * h * w; }
};

inline int64_t at(const Shape4& s, int64_t b, int64_t c, int64_t y, int64_t x) {
  return ((b * s.c + c) * s.h + y) * s.w + x;
}

// Zero-padded cross-correlation.
template <typename S>
std::vector<S> conv2d(const std::vector<S>& x, Shape4 xs, const std::vector<S>& w, int64_t cout,
                      int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
  const int64_t ho = (xs.h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (xs.w + 2 * pad - kw) / stride + 1;
  Shape4 os{xs.b, cout, ho, wo};
  std::vector<S> out(static_cast<size_t>(os.numel()), S(0));
  for (int64_t b = 0; b < xs.b; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          S acc = 0;
          for (int64_t ci = 0; ci < xs.c; ++ci)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t y = oy * stride - pad + i;
                const int64_t xx = ox * stride - pad + j;
                if (y < 0 || y >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += x[at(xs, b, ci, y, xx)] * w[((co * xs.c + ci) * kh + i) * kw + j];
              }
          out[at(os, b, co, oy, ox)] = acc;
        }
  return out;
}

template <typename S>
std::vector<S> pool2d_max(const std::vector<S>& x, Shape4 xs, int64_t k, int64_t stride) {
  const int64_t ho = (xs.h - k) / stride + 1, wo = (xs.w - k) / stride + 1;
  Shape4 os{xs.b, xs.c, ho, wo};
  std::vector<S> out(static_cast<size_t>(os.numel()));
  for (int64_t b = 0; b < xs.b; ++b)
    for (int64_t c = 0; c < xs.c; ++c)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          S best = x[at(xs, b, c, oy * stride, ox * stride)];
          for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < k; ++j)
              best = std::max(best, x[at(xs, b, c, oy * stride + i, ox * stride + j)]);
          out[at(os, b, c, oy, ox)] = best;
        }
  return out;
}

template <typename S>
std::vector<S> pool2d_avg(const std::vector<S>& x, Shape4 xs, int64_t k, int64_t stride) {
  const int64_t ho = (xs.h - k) / stride + 1, wo = (xs.w - k) / stride + 1;
  Shape4 os{xs.b, xs.c, ho, wo};
  std::vector<S> out(static_cast<size_t>(os.numel()));
  for (int64_t b = 0; b < xs.b; ++b)
    for (int64_t c = 0; c < xs.c; ++c)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          S acc = 0;
          for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < k; ++j)
              acc += x[at(xs, b, c, oy * stride + i, ox * stride + j)];
          out[at(os, b, c, oy, ox)] = acc / static_cast<S>(k * k);
        }
  return out;
}

// Two-pass statistics over an index set defined by the caller.
template <typename S>
void two_pass_stats(const std::vector<S>& x, const std::vector<int64_t>& idx, double* mean,
                    double* var) {
  double m = 0;
  for (int64_t i : idx) m += x[static_cast<size_t>(i)];
  m /= static_cast<double>(idx.size());
  double v = 0;
  for (int64_t i : idx) {
    const double d = x[static_cast<size_t>(i)] - m;
    v += d * d;
  }
  *mean = m;
  *var = v / static_cast<double>(idx.size());
}

// Textbook 4-neighbor bilinear interpolation with zero outside.
template <typename S>
S bilinear(const std::vector<S>& plane, int64_t h, int64_t w, double y, double x) {
  if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
    return S(0);
  const int64_t yl = static_cast<int64_t>(std::floor(y));
  const int64_t xl = static_cast<int64_t>(std::floor(x));
  auto px = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return static_cast<double>(plane[static_cast<size_t>(yy * w + xx)]);
  };
  const double ly = y - static_cast<double>(yl), lx = x - static_cast<double>(xl);
  return static_cast<S>((1 - ly) * ((1 - lx) * px(yl, xl) + lx * px(yl, xl + 1)) +
                        ly * ((1 - lx) * px(yl + 1, xl) + lx * px(yl + 1, xl + 1)));
}

// Modulated deformable convolution by direct tap loop over the scalar
// bilinear formula.
template <typename S>
std::vector<S> deform_conv2d(const std::vector<S>& x, Shape4 xs, const std::vector<S>& w,
                             int64_t cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                             const std::vector<S>& offsets, const std::vector<S>& masks) {
  const int64_t K = kh * kw;
  const int64_t ho = (xs.h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (xs.w + 2 * pad - kw) / stride + 1;
  const int64_t span = ho * wo;
  Shape4 os{xs.b, cout, ho, wo};
  std::vector<S> out(static_cast<size_t>(os.numel()), S(0));
  for (int64_t b = 0; b < xs.b; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0;
          for (int64_t ci = 0; ci < xs.c; ++ci) {
            std::vector<S> plane(static_cast<size_t>(xs.h * xs.w));
            for (int64_t i = 0; i < xs.h * xs.w; ++i)
              plane[static_cast<size_t>(i)] = x[(b * xs.c + ci) * xs.h * xs.w + i];
            for (int64_t k = 0; k < K; ++k) {
              const int64_t ki = k / kw, kj = k % kw;
              const double dy =
                  offsets[((b * 2 * K + 2 * k) * ho + oy) * wo + ox];
              const double dx =
                  offsets[((b * 2 * K + 2 * k + 1) * ho + oy) * wo + ox];
              const double m = masks[((b * K + k) * ho + oy) * wo + ox];
              const double sy = static_cast<double>(oy * stride - pad + ki) + dy;
              const double sx = static_cast<double>(ox * stride - pad + kj) + dx;
              acc += static_cast<double>(w[((co * xs.c + ci) * kh + ki) * kw + kj]) * m *
                     static_cast<double>(bilinear(plane, xs.h, xs.w, sy, sx));
            }
          }
          out[at(os, b, co, oy, ox)] = static_cast<S>(acc);
          (void)span;
        }
  return out;
}

// Single-window SSIM by the direct formula (uniform weights, no striding).
inline double ssim_single_window(const std::vector<double>& a, const std::vector<double>& b) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = static_cast<double>(a.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    mx += a[i];
    my += b[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, vxy = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    vx += (a[i] - mx) * (a[i] - mx);
    vy += (b[i] - my) * (b[i] - my);
    vxy += (a[i] - mx) * (b[i] - my);
  }
  vx /= n;
  vy /= n;
  vxy /= n;
  return ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace oracle
