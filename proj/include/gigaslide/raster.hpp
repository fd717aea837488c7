#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "gigaslide/error.hpp"

namespace gigaslide {

/// Interleaved 8-bit raster, row-major, `channels` samples per pixel.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const noexcept { return width <= 0 || height <= 0; }

  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }

  bool operator==(const Raster&) const = default;
};

/// One byte per pixel, 0 or 1.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width + x;
  }
  std::uint8_t& at(int x, int y) { return bits[index(x, y)]; }
  std::uint8_t at(int x, int y) const { return bits[index(x, y)]; }
  bool inside(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width && y < height;
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }

  bool operator==(const BinaryMask&) const = default;
};

/// Copy of the rectangle [x0, x0+w) x [y0, y0+h); caller guarantees bounds.
inline Raster crop(const Raster& src, int x0, int y0, int w, int h) {
  Raster out(w, h, src.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * src.channels;
  for (int y = 0; y < h; ++y) {
    const auto* from = src.pixels.data() + src.index(x0, y0 + y);
    std::copy(from, from + row_bytes, out.pixels.data() + out.index(0, y));
  }
  return out;
}

/// Box-average downsampling by an integer factor. Output dims are
/// ceil(dim / factor); edge blocks average only the pixels that exist.
inline Raster box_downsample(const Raster& src, int factor) {
  if (factor < 1) fail(ErrorCode::validation, "downsample factor must be >= 1");
  if (factor == 1) return src;
  const int w = (src.width + factor - 1) / factor;
  const int h = (src.height + factor - 1) / factor;
  Raster out(w, h, src.channels);
  std::vector<std::uint32_t> acc(static_cast<std::size_t>(w) * src.channels);
  for (int oy = 0; oy < h; ++oy) {
    std::fill(acc.begin(), acc.end(), 0u);
    const int y0 = oy * factor;
    const int y1 = std::min(src.height, y0 + factor);
    for (int y = y0; y < y1; ++y) {
      const auto* row = src.pixels.data() + src.index(0, y);
      for (int x = 0; x < src.width; ++x) {
        const int ox = x / factor;
        for (int c = 0; c < src.channels; ++c)
          acc[static_cast<std::size_t>(ox) * src.channels + c] += row[x * src.channels + c];
      }
    }
    for (int ox = 0; ox < w; ++ox) {
      const int cols = std::min(src.width, (ox + 1) * factor) - ox * factor;
      const std::uint32_t n = static_cast<std::uint32_t>(cols * (y1 - y0));
      for (int c = 0; c < src.channels; ++c) {
        const std::uint32_t sum = acc[static_cast<std::size_t>(ox) * src.channels + c];
        out.at(ox, oy, c) = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

/// Area-window resize to an explicit size. Each output pixel averages the
/// source pixels whose centers fall in its footprint (at least one pixel).
/// Used for non-integer ratios and for resizing patches to model input.
inline Raster box_resize(const Raster& src, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) fail(ErrorCode::validation, "resize target must be non-empty");
  Raster out(out_w, out_h, src.channels);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  auto span = [](int i, double s, int limit) {
    int a = static_cast<int>(std::floor(i * s + 1e-9));
    int b = static_cast<int>(std::floor((i + 1) * s + 1e-9));
    a = std::clamp(a, 0, limit - 1);
    b = std::clamp(b, a + 1, limit);
    return std::pair{a, b};
  };
  for (int oy = 0; oy < out_h; ++oy) {
    const auto [y0, y1] = span(oy, sy, src.height);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto [x0, x1] = span(ox, sx, src.width);
      const std::uint32_t n = static_cast<std::uint32_t>((x1 - x0) * (y1 - y0));
      for (int c = 0; c < src.channels; ++c) {
        std::uint32_t sum = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) sum += src.at(x, y, c);
        out.at(ox, oy, c) = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

}  // namespace gigaslide
