#include "dgf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dgf/common.hpp"
#include "dgf/image_io.hpp"
#include "dgf/rng.hpp"

namespace dgf {

namespace {

namespace fs = std::filesystem;

struct Vec2 {
  double x = 0, y = 0;
};

// One stroke as a dense polyline in the unit square, with cumulative arc
// lengths for tip tapering.
struct Stroke {
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cum[i] = length up to pts[i]
  double total = 0;

  void finish() {
    cum.assign(pts.size(), 0.0);
    for (size_t i = 1; i < pts.size(); ++i) {
      const double dx = pts[i].x - pts[i - 1].x, dy = pts[i].y - pts[i - 1].y;
      cum[i] = cum[i - 1] + std::sqrt(dx * dx + dy * dy);
    }
    total = cum.empty() ? 0.0 : cum.back();
  }
};

struct StyleParams {
  double thickness;  // stroke width in pixels at image_size 80
  double slant;      // horizontal shear
  double sx, sy;     // axis scales
  double curvature;  // perpendicular bend amplitude (fraction of chord)
  bool taper_tips;
};

StyleParams style_params(int64_t style, Rng& rng) {
  if (style == 0) return {2.4, 0.0, 1.0, 1.0, 0.0, false};
  // Deformations stay moderate: corresponding strokes of two styles must
  // remain spatially close, with thickness carrying most of the style signal.
  static const StyleParams kPatterns[4] = {
      {4.2, 0.18, 1.05, 0.96, 0.08, true},
      {1.4, -0.14, 0.93, 1.07, 0.12, false},
      {3.2, 0.08, 1.00, 1.00, 0.16, true},
      {2.0, -0.08, 1.08, 0.92, 0.05, false},
  };
  StyleParams p = kPatterns[(style - 1) % 4];
  p.thickness *= rng.uniform(0.92, 1.08);
  p.slant += rng.uniform(-0.04, 0.04);
  p.sx *= rng.uniform(0.97, 1.03);
  p.sy *= rng.uniform(0.97, 1.03);
  p.curvature = std::max(0.0, p.curvature + rng.uniform(-0.03, 0.03));
  return p;
}

void subdivide_quadratic(Vec2 a, Vec2 c, Vec2 b, int n, std::vector<Vec2>* out) {
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double u = 1.0 - t;
    out->push_back({u * u * a.x + 2 * u * t * c.x + t * t * b.x,
                    u * u * a.y + 2 * u * t * c.y + t * t * b.y});
  }
}

// Fixed per-content skeleton: 2..5 strokes drawn from glyph-like primitives.
std::vector<Stroke> content_skeleton(uint64_t seed, int64_t content) {
  Rng rng(seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(content) * 2654435761ull + 17);
  const int strokes = 2 + static_cast<int>(rng.index(4));
  std::vector<Stroke> out;
  for (int s = 0; s < strokes; ++s) {
    Stroke st;
    const int kind = static_cast<int>(rng.index(5));
    auto pt = [&](double lo, double hi) { return rng.uniform(lo, hi); };
    switch (kind) {
      case 0: {  // horizontal bar
        const double y = pt(0.2, 0.8);
        Vec2 a{pt(0.15, 0.35), y}, b{pt(0.65, 0.85), y + pt(-0.06, 0.06)};
        subdivide_quadratic(a, {(a.x + b.x) / 2, (a.y + b.y) / 2}, b, 16, &st.pts);
        break;
      }
      case 1: {  // vertical bar
        const double x = pt(0.2, 0.8);
        Vec2 a{x, pt(0.15, 0.35)}, b{x + pt(-0.06, 0.06), pt(0.65, 0.85)};
        subdivide_quadratic(a, {(a.x + b.x) / 2, (a.y + b.y) / 2}, b, 16, &st.pts);
        break;
      }
      case 2: {  // diagonal
        Vec2 a{pt(0.15, 0.45), pt(0.15, 0.45)}, b{pt(0.55, 0.85), pt(0.55, 0.85)};
        if (rng.index(2)) std::swap(a.y, b.y);
        subdivide_quadratic(a, {(a.x + b.x) / 2, (a.y + b.y) / 2}, b, 16, &st.pts);
        break;
      }
      case 3: {  // arc
        const Vec2 c{pt(0.35, 0.65), pt(0.35, 0.65)};
        const double r = pt(0.15, 0.32);
        const double a0 = pt(0.0, 2.0 * M_PI);
        const double sweep = pt(0.8 * M_PI, 1.7 * M_PI);
        for (int i = 0; i <= 24; ++i) {
          const double t = a0 + sweep * i / 24.0;
          st.pts.push_back({c.x + r * std::cos(t), c.y + r * std::sin(t)});
        }
        break;
      }
      default: {  // hook: vertical drop with a horizontal foot
        const double x = pt(0.25, 0.7);
        Vec2 a{x, pt(0.15, 0.3)}, m{x, pt(0.6, 0.8)};
        Vec2 b{x + pt(0.12, 0.28), m.y + pt(-0.05, 0.05)};
        subdivide_quadratic(a, {x, (a.y + m.y) / 2}, m, 12, &st.pts);
        subdivide_quadratic(m, {(m.x + b.x) / 2, m.y}, b, 8, &st.pts);
        break;
      }
    }
    st.finish();
    out.push_back(std::move(st));
  }
  return out;
}

// Applies the style's affine deformation and per-stroke curvature bend.
Stroke style_stroke(const Stroke& in, const StyleParams& p) {
  Stroke out;
  out.pts.reserve(in.pts.size());
  const Vec2 a = in.pts.front(), b = in.pts.back();
  double cx = b.x - a.x, cy = b.y - a.y;
  const double clen = std::sqrt(cx * cx + cy * cy);
  double nx = 0, ny = 0;
  if (clen > 1e-9) {
    nx = -cy / clen;
    ny = cx / clen;
  }
  for (size_t i = 0; i < in.pts.size(); ++i) {
    Vec2 q = in.pts[i];
    const double t = in.total > 0 ? in.cum[i] / in.total : 0.0;
    const double bend = p.curvature * clen * std::sin(M_PI * t);
    q.x += nx * bend;
    q.y += ny * bend;
    const double ux = q.x - 0.5, uy = q.y - 0.5;
    out.pts.push_back({0.5 + p.sx * ux + p.slant * uy, 0.5 + p.sy * uy});
  }
  out.finish();
  return out;
}

double dist_to_segment(double px, double py, Vec2 a, Vec2 b, double* t_seg) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 1e-18) t = std::clamp(((px - a.x) * vx + (py - a.y) * vy) / len2, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  *t_seg = t;
  return std::sqrt(dx * dx + dy * dy);
}

// Anti-aliased white-on-black rendering of the styled strokes.
std::vector<uint8_t> rasterize(const std::vector<Stroke>& strokes, const StyleParams& p,
                               int64_t size) {
  const double scale = static_cast<double>(size);
  const double half = p.thickness / 2.0;
  const double aa = 1.0;
  std::vector<uint8_t> img(static_cast<size_t>(size * size), 0);
  for (const Stroke& st : strokes) {
    // pixel bounding box expanded by the stroke footprint
    double lox = 1e9, loy = 1e9, hix = -1e9, hiy = -1e9;
    for (const Vec2& q : st.pts) {
      lox = std::min(lox, q.x);
      hix = std::max(hix, q.x);
      loy = std::min(loy, q.y);
      hiy = std::max(hiy, q.y);
    }
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(lox * scale - half - 2));
    const int64_t x1 = std::min<int64_t>(size - 1, static_cast<int64_t>(hix * scale + half + 2));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(loy * scale - half - 2));
    const int64_t y1 = std::min<int64_t>(size - 1, static_cast<int64_t>(hiy * scale + half + 2));
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const double px = (x + 0.5) / scale, py = (y + 0.5) / scale;
        double best = 1e9, best_t = 0.0;
        for (size_t i = 1; i < st.pts.size(); ++i) {
          double t_seg;
          const double d = dist_to_segment(px, py, st.pts[i - 1], st.pts[i], &t_seg);
          if (d < best) {
            best = d;
            best_t = st.total > 0
                         ? (st.cum[i - 1] + t_seg * (st.cum[i] - st.cum[i - 1])) / st.total
                         : 0.0;
          }
        }
        double w = half;
        if (p.taper_tips) {
          const double tip = std::min(best_t, 1.0 - best_t);
          w *= std::clamp(0.35 + tip * 4.0, 0.35, 1.0);
        }
        const double d_px = best * scale;
        const double cov = std::clamp((w + aa / 2 - d_px) / aa, 0.0, 1.0);
        const uint8_t v = static_cast<uint8_t>(std::lround(cov * 255.0));
        auto& dst = img[static_cast<size_t>(y * size + x)];
        dst = std::max(dst, v);
      }
  }
  return img;
}

std::string zero_pad(int64_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*lld", width, static_cast<long long>(v));
  return buf;
}

}  // namespace

void synth_corpus(const SynthSpec& spec, const std::string& root) {
  if (spec.num_styles < 1 || spec.num_contents < 1 || spec.image_size < 8)
    throw ConfigError("synth_corpus: spec out of range");
  fs::path rootp(root);
  if (fs::exists(rootp) && !fs::is_empty(rootp))
    throw ConfigError("synth_corpus: output directory is not empty: " + root);
  fs::create_directories(rootp);

  // Per-style parameters from one seeded stream, in style order.
  Rng style_rng(spec.seed ^ 0xC0FFEEull);
  std::vector<StyleParams> styles;
  for (int64_t s = 0; s < spec.num_styles; ++s) styles.push_back(style_params(s, style_rng));

  // Content split: deterministic shuffle, last ceil(fraction*N) ids go to test.
  std::vector<int64_t> order(static_cast<size_t>(spec.num_contents));
  for (int64_t i = 0; i < spec.num_contents; ++i) order[static_cast<size_t>(i)] = i;
  Rng split_rng(spec.seed ^ 0x5EEDull);
  for (int64_t i = spec.num_contents - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(split_rng.index(i + 1))]);
  const int64_t num_test =
      std::min<int64_t>(spec.num_contents,
                        static_cast<int64_t>(std::ceil(spec.test_fraction * spec.num_contents)));
  std::vector<bool> is_test(static_cast<size_t>(spec.num_contents), false);
  for (int64_t i = 0; i < num_test; ++i)
    is_test[static_cast<size_t>(order[static_cast<size_t>(spec.num_contents - 1 - i)])] = true;

  for (int64_t s = 0; s < spec.num_styles; ++s) {
    const fs::path dir = rootp / ("style_" + zero_pad(s, 3));
    fs::create_directories(dir);
    for (int64_t c = 0; c < spec.num_contents; ++c) {
      auto skeleton = content_skeleton(spec.seed, c);
      std::vector<Stroke> styled;
      styled.reserve(skeleton.size());
      for (const auto& st : skeleton) styled.push_back(style_stroke(st, styles[static_cast<size_t>(s)]));
      auto img = rasterize(styled, styles[static_cast<size_t>(s)], spec.image_size);
      Vec<float> unit(img.size());
      for (size_t i = 0; i < img.size(); ++i) unit[i] = detail::pixel_to_unit(img[i]);
      write_image(Tensor<float>::from_values({1, spec.image_size, spec.image_size}, std::move(unit)),
                  (dir / ("content_" + zero_pad(c, 3) + ".pgm")).string());
    }
  }

  std::ofstream mf(rootp / "manifest.txt");
  mf << "seed = " << spec.seed << "\n";
  mf << "num_styles = " << spec.num_styles << "\n";
  mf << "num_contents = " << spec.num_contents << "\n";
  mf << "image_size = " << spec.image_size << "\n";
  for (int64_t s = 0; s < spec.num_styles; ++s)
    mf << "style " << s << " style_" << zero_pad(s, 3) << "\n";
  for (int64_t c = 0; c < spec.num_contents; ++c)
    mf << "content " << c << " " << (is_test[static_cast<size_t>(c)] ? "test" : "train") << "\n";
  if (!mf) throw IoError("failed writing manifest under " + root);
}

}  // namespace dgf
