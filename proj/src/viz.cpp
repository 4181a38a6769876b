#include "dgf/viz.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dgf/image_io.hpp"

namespace dgf {

namespace detail {

void mean_displacement(const Tensor<float>& offsets, int64_t sample, std::vector<double>* dy,
                       std::vector<double>* dx) {
  if (offsets.rank() != 4 || offsets.dim(1) % 2 != 0)
    throw DimensionError("offset_flow_image expects [B,2K,H,W] offsets");
  const int64_t K = offsets.dim(1) / 2, H = offsets.dim(2), W = offsets.dim(3);
  const int64_t span = H * W;
  dy->assign(static_cast<size_t>(span), 0.0);
  dx->assign(static_cast<size_t>(span), 0.0);
  const float* base = offsets.data() + sample * offsets.dim(1) * span;
  for (int64_t k = 0; k < K; ++k)
    for (int64_t i = 0; i < span; ++i) {
      (*dy)[static_cast<size_t>(i)] += base[(2 * k) * span + i];
      (*dx)[static_cast<size_t>(i)] += base[(2 * k + 1) * span + i];
    }
  for (auto& v : *dy) v /= static_cast<double>(K);
  for (auto& v : *dx) v /= static_cast<double>(K);
}

void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
  h = h - std::floor(h / 360.0) * 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(hp)) {
    case 0: rr = c; gg = x; break;
    case 1: rr = x; gg = c; break;
    case 2: gg = c; bb = x; break;
    case 3: gg = x; bb = c; break;
    case 4: rr = x; bb = c; break;
    default: rr = c; bb = x; break;
  }
  const double m = v - c;
  *r = rr + m;
  *g = gg + m;
  *b = bb + m;
}

}  // namespace detail

Tensor<float> offset_flow_image(const Tensor<float>& offsets, int64_t sample) {
  std::vector<double> dy, dx;
  detail::mean_displacement(offsets, sample, &dy, &dx);
  const int64_t H = offsets.dim(2), W = offsets.dim(3);
  const int64_t span = H * W;
  std::vector<double> mag(static_cast<size_t>(span));
  for (int64_t i = 0; i < span; ++i)
    mag[static_cast<size_t>(i)] = std::hypot(dy[static_cast<size_t>(i)], dx[static_cast<size_t>(i)]);
  std::vector<double> sorted(mag);
  std::sort(sorted.begin(), sorted.end());
  const size_t q = static_cast<size_t>(std::floor(0.99 * static_cast<double>(span - 1)));
  const double norm = sorted[q];

  Vec<float> out(static_cast<size_t>(3 * span));
  for (int64_t i = 0; i < span; ++i) {
    const double m = mag[static_cast<size_t>(i)];
    const double sat = norm > 0.0 ? std::clamp(m / norm, 0.0, 1.0) : 0.0;
    const double hue =
        std::atan2(dy[static_cast<size_t>(i)], dx[static_cast<size_t>(i)]) * 180.0 / M_PI;
    double r, g, b;
    detail::hsv_to_rgb(hue, sat, 1.0, &r, &g, &b);
    out[static_cast<size_t>(i)] = static_cast<float>(r * 2.0 - 1.0);
    out[static_cast<size_t>(span + i)] = static_cast<float>(g * 2.0 - 1.0);
    out[static_cast<size_t>(2 * span + i)] = static_cast<float>(b * 2.0 - 1.0);
  }
  return Tensor<float>::from_values({3, H, W}, std::move(out));
}

Tensor<float> feature_map_image(const Tensor<float>& feature, int64_t channel) {
  if (feature.rank() != 3) throw DimensionError("feature_map_image expects [C,H,W]");
  if (channel < 0 || channel >= feature.dim(0))
    throw DimensionError("feature_map_image: channel out of range");
  const int64_t H = feature.dim(1), W = feature.dim(2);
  const float* v = feature.data() + channel * H * W;
  double lo = v[0], hi = v[0];
  for (int64_t i = 0; i < H * W; ++i) {
    lo = std::min(lo, static_cast<double>(v[i]));
    hi = std::max(hi, static_cast<double>(v[i]));
  }
  Vec<float> out(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) {
    uint8_t byte = 128;
    if (hi > lo) {
      const double t = (static_cast<double>(v[i]) - lo) / (hi - lo);
      byte = static_cast<uint8_t>(std::lround(t * 255.0));
    }
    out[static_cast<size_t>(i)] = detail::pixel_to_unit(byte);
  }
  return Tensor<float>::from_values({1, H, W}, std::move(out));
}

}  // namespace dgf
