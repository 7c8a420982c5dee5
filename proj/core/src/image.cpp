#include "cxr/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <png.h>

#include "cxr/errors.hpp"

namespace cxr {

namespace {

void validate_image(const GrayImage& img, const char* what) {
  if (img.width <= 0 || img.height <= 0) {
    throw DataError(std::string(what) + ": empty image");
  }
  if (img.bit_depth != 8 && img.bit_depth != 16) {
    throw DataError(std::string(what) + ": bit depth must be 8 or 16");
  }
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw DataError(std::string(what) + ": pixel buffer size mismatch");
  }
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

GrayImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }
  std::vector<png_bytep> rows;
  GrayImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG is not grayscale: " + path.string());
  }
  if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (depth == 16 && std::endian::native == std::endian::little) {
    png_set_swap(png);
  }
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  std::vector<std::uint8_t> buf(png_get_rowbytes(png, info) * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) {
    rows[y] = buf.data() + static_cast<std::size_t>(y) * png_get_rowbytes(png, info);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (depth == 8) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buf[i];
  } else {
    std::memcpy(img.pixels.data(), buf.data(), img.pixels.size() * 2);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  validate_image(img, "write_png");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (img.bit_depth == 16 && std::endian::native == std::endian::little) {
    png_set_swap(png);
  }
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> row(img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        row[x] = static_cast<std::uint8_t>(img.at(y, x));
      }
      png_write_row(png, row.data());
    }
  } else {
    for (int y = 0; y < img.height; ++y) {
      png_write_row(png, reinterpret_cast<png_const_bytep>(
                             img.pixels.data() + static_cast<std::size_t>(y) * img.width));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_xri(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  std::uint8_t hdr[10];
  if (!in.read(magic, 4) || std::memcmp(magic, "XRI1", 4) != 0) {
    throw DataError("bad XRI magic: " + path.string());
  }
  if (!in.read(reinterpret_cast<char*>(hdr), 10)) {
    throw DataError("truncated XRI header: " + path.string());
  }
  const auto u32 = [&](int off) {
    return static_cast<std::uint32_t>(hdr[off]) | (static_cast<std::uint32_t>(hdr[off + 1]) << 8) |
           (static_cast<std::uint32_t>(hdr[off + 2]) << 16) |
           (static_cast<std::uint32_t>(hdr[off + 3]) << 24);
  };
  const std::uint32_t w = u32(0), h = u32(4);
  const int depth = hdr[8] | (hdr[9] << 8);
  if (w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16 || (depth != 8 && depth != 16)) {
    throw DataError("bad XRI header: " + path.string());
  }
  GrayImage img(static_cast<int>(w), static_cast<int>(h), depth);
  const std::size_t n = img.pixels.size();
  if (depth == 8) {
    std::vector<std::uint8_t> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
      throw DataError("truncated XRI payload: " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = buf[i];
  } else {
    std::vector<std::uint8_t> buf(n * 2);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2))) {
      throw DataError("truncated XRI payload: " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      img.pixels[i] = static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
    }
  }
  return img;
}

void write_xri(const std::filesystem::path& path, const GrayImage& img) {
  validate_image(img, "write_xri");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path.string());
  out.write("XRI1", 4);
  const auto put32 = [&](std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put32(static_cast<std::uint32_t>(img.width));
  put32(static_cast<std::uint32_t>(img.height));
  const std::uint8_t d[2] = {static_cast<std::uint8_t>(img.bit_depth),
                             static_cast<std::uint8_t>(img.bit_depth >> 8)};
  out.write(reinterpret_cast<const char*>(d), 2);
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> buf(img.pixels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<std::uint8_t>(img.pixels[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<std::uint8_t> buf(img.pixels.size() * 2);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      buf[2 * i] = static_cast<std::uint8_t>(img.pixels[i]);
      buf[2 * i + 1] = static_cast<std::uint8_t>(img.pixels[i] >> 8);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw DataError("XRI write failed: " + path.string());
}

GrayImage load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".xri") return read_xri(path);
  throw DataError("unsupported image extension: " + path.string());
}

GrayImage histogram_normalize(const GrayImage& img) {
  validate_image(img, "histogram_normalize");
  const std::size_t levels = std::size_t{1} << img.bit_depth;
  std::vector<std::uint64_t> hist(levels, 0);
  for (const std::uint16_t v : img.pixels) {
    if (v >= levels) throw DataError("histogram_normalize: pixel exceeds bit depth");
    ++hist[v];
  }
  std::vector<std::uint64_t> cdf(levels, 0);
  std::uint64_t acc = 0;
  std::uint64_t cdf_min = 0;
  for (std::size_t v = 0; v < levels; ++v) {
    acc += hist[v];
    cdf[v] = acc;
    if (cdf_min == 0 && hist[v] > 0) cdf_min = acc;
  }
  GrayImage out(img.width, img.height, 8);
  const std::uint64_t n = img.pixels.size();
  if (n == cdf_min) return out;  // constant image -> zeros
  const double denom = static_cast<double>(n - cdf_min);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double scaled = 255.0 * static_cast<double>(cdf[img.pixels[i]] - cdf_min) / denom;
    out.pixels[i] = static_cast<std::uint16_t>(std::lround(scaled));
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& img, int new_w, int new_h) {
  validate_image(img, "resize_bilinear");
  if (new_w <= 0 || new_h <= 0) throw DataError("resize_bilinear: bad target size");
  if (new_w == img.width && new_h == img.height) return img;
  GrayImage out(new_w, new_h, img.bit_depth);
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(img.height - 1, static_cast<int>(fy));
    const int y1 = std::min(img.height - 1, y0 + 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(img.width - 1, static_cast<int>(fx));
      const int x1 = std::min(img.width - 1, x0 + 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * img.at(y0, x0) + wx * img.at(y0, x1);
      const double bot = (1.0 - wx) * img.at(y1, x0) + wx * img.at(y1, x1);
      out.at(y, x) = static_cast<std::uint16_t>(std::lround((1.0 - wy) * top + wy * bot));
    }
  }
  return out;
}

void StatsAccumulator::add(const GrayImage& img) {
  for (const std::uint16_t v : img.pixels) {
    sum_ += v;
    sumsq_ += static_cast<double>(v) * v;
  }
  n_ += img.pixels.size();
}

PixelStats StatsAccumulator::finish() const {
  PixelStats s;
  s.count = n_;
  if (n_ == 0) return s;
  s.mean = sum_ / static_cast<double>(n_);
  s.stddev = std::sqrt(std::max(0.0, sumsq_ / static_cast<double>(n_) - s.mean * s.mean));
  return s;
}

void standardize_into(const GrayImage& img, const PixelStats& stats,
                      Tensor4& batch, int slot) {
  validate_image(img, "standardize_into");
  if (slot < 0 || slot >= batch.n || batch.c != 3 || batch.h != img.height ||
      batch.w != img.width) {
    throw std::invalid_argument("standardize_into: shape mismatch");
  }
  if (!(stats.stddev > 0.0) || !std::isfinite(stats.stddev) || !std::isfinite(stats.mean)) {
    throw NumericError("standardize_into: degenerate pixel statistics");
  }
  const double inv = 1.0 / stats.stddev;
  double* c0 = batch.plane(slot, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    c0[i] = (static_cast<double>(img.pixels[i]) - stats.mean) * inv;
  }
  const std::size_t plane = img.pixels.size();
  std::copy(c0, c0 + plane, batch.plane(slot, 1));
  std::copy(c0, c0 + plane, batch.plane(slot, 2));
}

}  // namespace cxr
