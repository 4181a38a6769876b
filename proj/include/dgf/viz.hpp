#pragma once

#include "dgf/tensor.hpp"

namespace dgf {

/// Renders one sample's offset field as a hue-wheel image: per position,
/// the mean displacement over all taps maps its angle to hue and its
/// magnitude (normalized by the 99th-percentile magnitude) to saturation.
/// Zero displacement renders white. Returns a [3,H,W] image on the [-1,1]
/// scale, ready for write_image.
Tensor<float> offset_flow_image(const Tensor<float>& offsets, int64_t sample = 0);

/// Min-max normalizes one channel of a [C,H,W] feature map to an 8-bit
/// grayscale image ([1,H,W], [-1,1] scale); constant channels map to
/// mid-gray 128.
Tensor<float> feature_map_image(const Tensor<float>& feature, int64_t channel);

namespace detail {
/// Mean (dy, dx) displacement per position for one sample of a [B,2K,H,W]
/// offset tensor.
void mean_displacement(const Tensor<float>& offsets, int64_t sample, std::vector<double>* dy,
                       std::vector<double>* dx);
void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b);
}  // namespace detail

}  // namespace dgf
