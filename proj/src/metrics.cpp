#include "dgf/metrics.hpp"

#include <cmath>

namespace dgf {

namespace {

constexpr int64_t kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> w = [] {
    std::vector<double> g(static_cast<size_t>(kWin * kWin));
    double total = 0;
    for (int64_t i = 0; i < kWin; ++i)
      for (int64_t j = 0; j < kWin; ++j) {
        const double dy = static_cast<double>(i - kWin / 2);
        const double dx = static_cast<double>(j - kWin / 2);
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        g[static_cast<size_t>(i * kWin + j)] = v;
        total += v;
      }
    for (auto& v : g) v /= total;
    return g;
  }();
  return w;
}

double ssim_term(double mx, double my, double vx, double vy, double vxy) {
  return ((2 * mx * my + kC1) * (2 * vxy + kC2)) /
         ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

}  // namespace

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int64_t h, int64_t w) {
  if (h < kWin || w < kWin) {
    // single uniform window covering the whole plane
    const double n = static_cast<double>(h * w);
    double mx = 0, my = 0;
    for (int64_t i = 0; i < h * w; ++i) {
      mx += a[static_cast<size_t>(i)];
      my += b[static_cast<size_t>(i)];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, vxy = 0;
    for (int64_t i = 0; i < h * w; ++i) {
      const double dx = a[static_cast<size_t>(i)] - mx;
      const double dy = b[static_cast<size_t>(i)] - my;
      vx += dx * dx;
      vy += dy * dy;
      vxy += dx * dy;
    }
    return ssim_term(mx, my, vx / n, vy / n, vxy / n);
  }
  const auto& win = gaussian_window();
  double acc = 0;
  int64_t count = 0;
  for (int64_t y = 0; y + kWin <= h; ++y)
    for (int64_t x = 0; x + kWin <= w; ++x) {
      double mx = 0, my = 0;
      for (int64_t i = 0; i < kWin; ++i)
        for (int64_t j = 0; j < kWin; ++j) {
          const double g = win[static_cast<size_t>(i * kWin + j)];
          mx += g * a[static_cast<size_t>((y + i) * w + (x + j))];
          my += g * b[static_cast<size_t>((y + i) * w + (x + j))];
        }
      double vx = 0, vy = 0, vxy = 0;
      for (int64_t i = 0; i < kWin; ++i)
        for (int64_t j = 0; j < kWin; ++j) {
          const double g = win[static_cast<size_t>(i * kWin + j)];
          const double da = a[static_cast<size_t>((y + i) * w + (x + j))] - mx;
          const double db = b[static_cast<size_t>((y + i) * w + (x + j))] - my;
          vx += g * da * da;
          vy += g * db * db;
          vxy += g * da * db;
        }
      acc += ssim_term(mx, my, vx, vy, vxy);
      ++count;
    }
  return acc / static_cast<double>(count);
}

PairMetrics pixel_metrics(const Tensor<float>& generated, const Tensor<float>& target) {
  if (generated.shape() != target.shape())
    throw DimensionError("pixel_metrics: shape mismatch " + shape_str(generated.shape()) + " vs " +
                         shape_str(target.shape()));
  if (generated.rank() != 3) throw DimensionError("pixel_metrics expects [C,H,W] images");
  const int64_t C = generated.dim(0), H = generated.dim(1), W = generated.dim(2);
  const float* gv = generated.data();
  const float* tv = target.data();
  double l1 = 0, sq = 0, ssim = 0;
  std::vector<double> ga(static_cast<size_t>(H * W)), tb(static_cast<size_t>(H * W));
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < H * W; ++i) {
      const double x = (static_cast<double>(gv[c * H * W + i]) + 1.0) / 2.0;
      const double y = (static_cast<double>(tv[c * H * W + i]) + 1.0) / 2.0;
      ga[static_cast<size_t>(i)] = x;
      tb[static_cast<size_t>(i)] = y;
      l1 += std::abs(x - y);
      sq += (x - y) * (x - y);
    }
    ssim += ssim_plane(ga, tb, H, W);
  }
  const double n = static_cast<double>(C * H * W);
  return {l1 / n, std::sqrt(sq / n), ssim / static_cast<double>(C)};
}

MetricReport evaluate_model(const ModelBundle<float>& model, const GlyphDataset& dataset,
                            int64_t refs_per_style) {
  const auto& test_ids = dataset.test_contents();
  if (static_cast<int64_t>(test_ids.size()) < refs_per_style)
    throw ConfigError("evaluate_model: test split has " + std::to_string(test_ids.size()) +
                      " contents per style, need at least " + std::to_string(refs_per_style) +
                      " reference images");
  NoGradScope ng;
  MetricReport report;
  std::vector<int64_t> ref_ids(test_ids.begin(), test_ids.begin() + refs_per_style);
  for (int64_t s = 0; s < dataset.num_styles(); ++s) {
    Tensor<float> refs = dataset.stack(s, ref_ids);
    Tensor<float> code = average_style_code(refs, model);
    Tensor<float> contents = dataset.stack(0, test_ids);  // canonical source style
    Tensor<float> z_s = tile_style_code(code, contents.dim(0));
    Tensor<float> out = model.generate_with_code(contents, z_s).image;
    const int64_t S = dataset.image_size();
    for (size_t i = 0; i < test_ids.size(); ++i) {
      Vec<float> one(static_cast<size_t>(3 * S * S));
      std::copy_n(out.data() + static_cast<int64_t>(i) * 3 * S * S, 3 * S * S, one.begin());
      Tensor<float> gen = Tensor<float>::from_values({3, S, S}, std::move(one));
      PairMetrics m = pixel_metrics(gen, dataset.image(s, test_ids[i]));
      report.per_pair_l1.push_back(m.l1);
      report.per_pair_rmse.push_back(m.rmse);
      report.per_pair_ssim.push_back(m.ssim);
      if (m.rmse < m.l1 - 1e-12)
        throw UsageError("metric sanity violated: per-pair RMSE fell below L1");
    }
  }
  for (double v : report.per_pair_l1) report.l1 += v;
  for (double v : report.per_pair_rmse) report.rmse += v;
  for (double v : report.per_pair_ssim) report.ssim += v;
  const double n = static_cast<double>(report.pairs());
  report.l1 /= n;
  report.rmse /= n;
  report.ssim /= n;
  return report;
}

}  // namespace dgf
