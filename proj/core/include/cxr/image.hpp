#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cxr/tensor.hpp"

namespace cxr {

// Single-channel image, 8- or 16-bit, row-major top-to-bottom.
struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, int depth)
      : width(w), height(h), bit_depth(depth),
        pixels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t max_value() const { return static_cast<std::uint16_t>((1u << bit_depth) - 1); }
};

// Grayscale PNG, 8- or 16-bit. Anything else (color, palette) is rejected.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& img);

// Raw container for higher-depth scans: "XRI1", u32 width, u32 height,
// u16 bit depth, then width*height little-endian samples.
GrayImage read_xri(const std::filesystem::path& path);
void write_xri(const std::filesystem::path& path, const GrayImage& img);

// Dispatches on extension: .png or .xri.
GrayImage load_image(const std::filesystem::path& path);

// Histogram equalization to 8 bits:
//   out = round(255 * (cdf(v) - cdf_min) / (N - cdf_min))
// where cdf_min is the cdf of the smallest value present. A constant image
// maps to all zeros.
GrayImage histogram_normalize(const GrayImage& img);

GrayImage resize_bilinear(const GrayImage& img, int new_w, int new_h);

struct PixelStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::uint64_t count = 0;
};

// Streaming mean/stddev over raw pixel values; order-deterministic.
class StatsAccumulator {
 public:
  void add(const GrayImage& img);
  PixelStats finish() const;

 private:
  std::uint64_t n_ = 0;
  double sum_ = 0.0;
  double sumsq_ = 0.0;
};

// Writes (v - mean) / stddev into all three channels of batch slot `slot`.
// Throws NumericError when stddev is zero or not finite.
void standardize_into(const GrayImage& img, const PixelStats& stats,
                      Tensor4& batch, int slot);

}  // namespace cxr
