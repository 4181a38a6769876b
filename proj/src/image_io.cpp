#include "dgf/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace dgf {

namespace detail {

float pixel_to_unit(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

uint8_t unit_to_pixel(float t) {
  const float v = std::floor((t + 1.0f) * 127.5f + 0.5f);
  if (v <= 0.0f) return 0;
  if (v >= 255.0f) return 255;
  return static_cast<uint8_t>(v);
}

namespace {

struct Reader {
  std::string bytes;
  size_t pos = 0;
  std::string path;

  explicit Reader(const std::string& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open image file: " + p);
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(path + ": " + msg, static_cast<int64_t>(pos));
  }

  void skip_space() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {  // comment runs to end of line
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int64_t read_int() {
    skip_space();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') fail("expected integer");
    int64_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (int64_t{1} << 30)) fail("integer out of range");
      ++pos;
    }
    return v;
  }
};

}  // namespace
}  // namespace detail

Tensor<float> read_image(const std::string& path) {
  detail::Reader r(path);
  if (r.bytes.size() < 2 || r.bytes[0] != 'P' || (r.bytes[1] != '5' && r.bytes[1] != '6'))
    throw IoError(path + ": not a binary PGM/PPM file (magic must be P5 or P6)", 0);
  const bool color = r.bytes[1] == '6';
  r.pos = 2;
  const int64_t w = r.read_int();
  const int64_t h = r.read_int();
  const int64_t maxval = r.read_int();
  if (w <= 0 || h <= 0) r.fail("non-positive image extents");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (must be 255)");
  if (r.pos >= r.bytes.size()) r.fail("missing whitespace after header");
  const char sep = r.bytes[r.pos];
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') r.fail("expected whitespace after maxval");
  ++r.pos;
  const int64_t channels_in = color ? 3 : 1;
  const int64_t payload = w * h * channels_in;
  if (static_cast<int64_t>(r.bytes.size()) - static_cast<int64_t>(r.pos) < payload)
    throw IoError(path + ": truncated payload, expected " + std::to_string(payload) + " bytes",
                  static_cast<int64_t>(r.bytes.size()));

  Vec<float> data(static_cast<size_t>(3 * h * w));
  const uint8_t* px = reinterpret_cast<const uint8_t*>(r.bytes.data()) + r.pos;
  if (color) {
    for (int64_t i = 0; i < h * w; ++i)
      for (int64_t c = 0; c < 3; ++c)
        data[static_cast<size_t>(c * h * w + i)] = detail::pixel_to_unit(px[i * 3 + c]);
  } else {
    for (int64_t i = 0; i < h * w; ++i) {
      const float v = detail::pixel_to_unit(px[i]);
      data[static_cast<size_t>(i)] = v;
      data[static_cast<size_t>(h * w + i)] = v;
      data[static_cast<size_t>(2 * h * w + i)] = v;
    }
  }
  return Tensor<float>::from_values({3, h, w}, std::move(data));
}

void write_image(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw DimensionError("write_image expects [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W * C));
  const float* v = image.data();
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < C; ++c)
        row[static_cast<size_t>(x * C + c)] = detail::unit_to_pixel(v[(c * H + y) * W + x]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

void write_image_gray(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3) throw DimensionError("write_image_gray expects [C,H,W]");
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const float* v = image.data();
  const int64_t plane = H * W;
  bool replicated = true;
  for (int64_t c = 1; replicated && c < C; ++c)
    for (int64_t i = 0; i < plane; ++i)
      if (v[c * plane + i] != v[i]) {
        replicated = false;
        break;
      }
  Vec<float> gray(static_cast<size_t>(plane), 0.0f);
  if (replicated) {
    std::copy_n(v, plane, gray.begin());
  } else {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < plane; ++i) gray[static_cast<size_t>(i)] += v[c * plane + i];
    for (auto& g : gray) g /= static_cast<float>(C);
  }
  write_image(Tensor<float>::from_values({1, H, W}, std::move(gray)), path);
}

}  // namespace dgf
