#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gigaslide/error.hpp"
#include "gigaslide/raster.hpp"

namespace gigaslide::pyramid {

using Histogram = std::array<std::uint64_t, 256>;

/// Stain-sensitive intensity: the green complement (H&E absorbs green).
inline std::uint8_t magenta(std::uint8_t /*r*/, std::uint8_t g, std::uint8_t /*b*/) {
  return static_cast<std::uint8_t>(255 - g);
}

inline Histogram magenta_histogram(const Raster& image) {
  Histogram h{};
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) ++h[255 - image.pixels[i * image.channels + 1]];
  return h;
}

struct OtsuResult {
  int threshold = 0;
  bool degenerate = false;  // fewer than two occupied bins
};

/// Otsu's threshold: class 0 = values <= t, class 1 = values > t.
/// Maximizes between-class variance; ties resolve to the lowest t.
inline OtsuResult otsu_threshold(const Histogram& hist) {
  long double total = 0, total_sum = 0;
  int occupied = 0;
  for (int v = 0; v < 256; ++v) {
    total += hist[v];
    total_sum += static_cast<long double>(v) * hist[v];
    occupied += hist[v] > 0;
  }
  if (occupied < 2) return {0, true};

  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  long double best = -1;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += static_cast<std::uint64_t>(t) * hist[t];
    const long double w0 = n0;
    const long double w1 = total - w0;
    if (n0 == 0 || w1 <= 0) continue;
    // N^2 * between-class variance = (N*S0 - n0*S)^2 / (n0*n1)
    const long double diff = total * s0 - w0 * total_sum;
    const long double score = diff * diff / (w0 * w1);
    if (score > best) {
      best = score;
      best_t = t;
    }
  }
  return {best_t, false};
}

struct TissueMask {
  BinaryMask mask;
  int threshold_used = 0;
  bool degenerate = false;  // constant image: all background, flagged

  int width() const { return mask.width; }
  int height() const { return mask.height; }
  double tissue_fraction() const {
    const double n = static_cast<double>(mask.width) * mask.height;
    return n > 0 ? static_cast<double>(mask.count()) / n : 0.0;
  }
};

inline TissueMask tissue_mask(const Raster& image) {
  if (image.channels != 3) fail(ErrorCode::validation, "tissue mask needs a 3-channel image");
  TissueMask out;
  out.mask = BinaryMask(image.width, image.height, 0);
  const auto otsu = otsu_threshold(magenta_histogram(image));
  out.threshold_used = otsu.threshold;
  out.degenerate = otsu.degenerate;
  if (otsu.degenerate) return out;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i)
    out.mask.bits[i] = (255 - image.pixels[i * 3 + 1]) > otsu.threshold ? 1 : 0;
  return out;
}

// ---- patch grid ----------------------------------------------------------------

struct PatchPosition {
  int x = 0;
  int y = 0;
  bool operator==(const PatchPosition&) const = default;
};

struct PatchGrid {
  int width = 0;
  int height = 0;
  int patch_size = 512;
  int stride = 256;
  int columns = 0;
  int rows = 0;
  std::vector<PatchPosition> positions;  // row-major
  std::vector<double> tissue_fraction;   // parallel to positions
  std::vector<std::size_t> kept;         // indices into positions

  bool on_grid(int x, int y) const {
    return x >= 0 && y >= 0 && x % stride == 0 && y % stride == 0 && x / stride < columns &&
           y / stride < rows;
  }
  std::size_t index_of(int x, int y) const {
    return static_cast<std::size_t>(y / stride) * columns + static_cast<std::size_t>(x / stride);
  }
};

/// floor((dim - size)/stride) + 1 windows fit along an axis, or none.
inline int windows_along(int dim, int patch_size, int stride) {
  return dim >= patch_size ? (dim - patch_size) / stride + 1 : 0;
}

/// Tissue fraction for every full window; partial edge windows are dropped.
inline PatchGrid extract_patch_grid(int width, int height, const BinaryMask& mask, int patch_size = 512,
                                    int stride = 256, double min_fraction = 0.2) {
  if (stride < 1 || patch_size < stride) fail(ErrorCode::validation, "need patch_size >= stride >= 1");
  if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) fail(ErrorCode::validation, "min_fraction must be in [0,1]");
  if (mask.width != width || mask.height != height)
    fail(ErrorCode::validation, "mask dimensions differ from the slide dimensions");

  PatchGrid grid;
  grid.width = width;
  grid.height = height;
  grid.patch_size = patch_size;
  grid.stride = stride;
  grid.columns = windows_along(width, patch_size, stride);
  grid.rows = windows_along(height, patch_size, stride);
  if (grid.columns == 0 || grid.rows == 0) {
    grid.columns = grid.rows = 0;
    return grid;
  }

  // summed-area table, (w+1) x (h+1)
  const std::size_t sw = static_cast<std::size_t>(width) + 1;
  std::vector<std::uint64_t> sat(sw * (static_cast<std::size_t>(height) + 1), 0);
  for (int y = 0; y < height; ++y) {
    std::uint64_t row_sum = 0;
    for (int x = 0; x < width; ++x) {
      row_sum += mask.at(x, y);
      sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row_sum;
    }
  }
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.columns; ++c) {
      const std::size_t x0 = static_cast<std::size_t>(c) * stride, y0 = static_cast<std::size_t>(r) * stride;
      const std::size_t x1 = x0 + patch_size, y1 = y0 + patch_size;
      const std::uint64_t count = sat[y1 * sw + x1] - sat[y0 * sw + x1] - sat[y1 * sw + x0] + sat[y0 * sw + x0];
      const double fraction = static_cast<double>(count) / area;
      if (fraction >= min_fraction) grid.kept.push_back(grid.positions.size());
      grid.positions.push_back({static_cast<int>(x0), static_cast<int>(y0)});
      grid.tissue_fraction.push_back(fraction);
    }
  }
  return grid;
}

}  // namespace gigaslide::pyramid
