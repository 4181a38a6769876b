#pragma once

#include <cstdint>
#include <vector>

#include "dgf/dataset.hpp"
#include "dgf/nets.hpp"

namespace dgf {

/// Aggregated pixel metrics over an evaluation set; per-pair values are kept
/// for paired statistical comparisons.
struct MetricReport {
  double l1 = 0, rmse = 0, ssim = 0;
  std::vector<double> per_pair_l1, per_pair_rmse, per_pair_ssim;
  int64_t pairs() const { return static_cast<int64_t>(per_pair_l1.size()); }
};

struct PairMetrics {
  double l1 = 0, rmse = 0, ssim = 0;
};

/// L1, RMSE, and SSIM between two equal-shape images on the [-1,1] scale;
/// values are mapped to [0,1] before computing. SSIM uses an 11x11 Gaussian
/// window (sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 on the unit scale) over all
/// valid positions, averaged across channels; images smaller than the window
/// fall back to a single uniform whole-image window.
PairMetrics pixel_metrics(const Tensor<float>& generated, const Tensor<float>& target);

/// SSIM alone, same conventions, on [0,1]-scale single-channel planes.
double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int64_t h, int64_t w);

/// Generates every (test content, style) pair from averaged style codes and
/// compares against the ground-truth rendering. Content inputs come from the
/// canonical source style 0; style references are the first refs_per_style
/// test-split renderings of the target style.
MetricReport evaluate_model(const ModelBundle<float>& model, const GlyphDataset& dataset,
                            int64_t refs_per_style = 10);

}  // namespace dgf
