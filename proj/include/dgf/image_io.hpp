#pragma once

#include <string>

#include "dgf/tensor.hpp"

namespace dgf {

/// Reads an 8-bit binary PGM (P5) or PPM (P6) image with maxval 255 into a
/// [3,H,W] tensor on the [-1,1] scale (v/127.5 - 1); grayscale input is
/// replicated across the three channels. Malformed input raises IoError with
/// the byte offset of the failure.
Tensor<float> read_image(const std::string& path);

/// Writes a [1,H,W] or [3,H,W] tensor on the [-1,1] scale as P5 or P6
/// respectively, inverting the read mapping with round-half-up and clamping
/// to [0,255].
void write_image(const Tensor<float>& image, const std::string& path);

/// Collapses [3,H,W] to grayscale by channel mean and writes a P5 file.
void write_image_gray(const Tensor<float>& image, const std::string& path);

namespace detail {
float pixel_to_unit(uint8_t v);    // v/127.5 - 1
uint8_t unit_to_pixel(float t);    // inverse with round-half-up, clamped
}  // namespace detail

}  // namespace dgf
