#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <mutex>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gigaslide/error.hpp"
#include "gigaslide/image_codec.hpp"
#include "gigaslide/raster.hpp"

namespace gigaslide::pyramid {

struct Dims {
  int width = 0;
  int height = 0;
  bool operator==(const Dims&) const = default;
};

/// Pixel rectangle of one tile inside its level, overlap margins included.
struct TileRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

/// Smallest L with 2^L >= max(width, height).
inline int max_level_for(int width, int height) {
  const int m = std::max(width, height);
  int level = 0;
  while ((1LL << level) < m) ++level;
  return level;
}

/// Level sizes from 0 (1x1) to max_level (full size), by repeated ceil-halving.
inline std::vector<Dims> level_dimensions(int width, int height) {
  const int top = max_level_for(width, height);
  std::vector<Dims> dims(static_cast<std::size_t>(top) + 1);
  Dims d{width, height};
  for (int level = top; level >= 0; --level) {
    dims[static_cast<std::size_t>(level)] = d;
    d = {(d.width + 1) / 2, (d.height + 1) / 2};
  }
  return dims;
}

struct TilePyramidDescriptor {
  std::string slide_id;
  int width = 0;
  int height = 0;
  int tile_size = 254;
  int overlap = 1;
  codec::TileFormat format = codec::TileFormat::png;
  int max_level = 0;
  std::vector<Dims> level_dims;

  int columns(int level) const {
    return (level_dims.at(static_cast<std::size_t>(level)).width + tile_size - 1) / tile_size;
  }
  int rows(int level) const {
    return (level_dims.at(static_cast<std::size_t>(level)).height + tile_size - 1) / tile_size;
  }
  long long tile_count(int level) const { return static_cast<long long>(columns(level)) * rows(level); }

  bool has_tile(int level, int col, int row) const {
    return level >= 0 && level <= max_level && col >= 0 && row >= 0 &&
           col < columns(level) && row < rows(level);
  }

  TileRect tile_rect(int level, int col, int row) const {
    const Dims d = level_dims.at(static_cast<std::size_t>(level));
    const int x0 = std::max(0, col * tile_size - overlap);
    const int y0 = std::max(0, row * tile_size - overlap);
    const int x1 = std::min(d.width, (col + 1) * tile_size + overlap);
    const int y1 = std::min(d.height, (row + 1) * tile_size + overlap);
    return {x0, y0, x1 - x0, y1 - y0};
  }

  std::string extension() const { return codec::extension(format); }
};

inline TilePyramidDescriptor make_descriptor(std::string slide_id, int width, int height,
                                             int tile_size = 254, int overlap = 1,
                                             codec::TileFormat format = codec::TileFormat::png) {
  if (width < 1 || height < 1) fail(ErrorCode::validation, "image must have non-zero dimensions");
  if (tile_size < 1) fail(ErrorCode::validation, "tile_size must be >= 1");
  if (overlap < 0 || overlap >= tile_size)
    fail(ErrorCode::validation, "overlap must satisfy 0 <= overlap < tile_size");
  TilePyramidDescriptor d;
  d.slide_id = std::move(slide_id);
  d.width = width;
  d.height = height;
  d.tile_size = tile_size;
  d.overlap = overlap;
  d.format = format;
  d.max_level = max_level_for(width, height);
  d.level_dims = level_dimensions(width, height);
  return d;
}

// ---- Deep Zoom descriptor file ----------------------------------------------

inline std::string to_dzi_xml(const TilePyramidDescriptor& d) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<Image xmlns=\"http://schemas.microsoft.com/deepzoom/2008\"\n"
      << "  Format=\"" << d.extension() << "\"\n"
      << "  Overlap=\"" << d.overlap << "\"\n"
      << "  TileSize=\"" << d.tile_size << "\">\n"
      << "  <Size Height=\"" << d.height << "\" Width=\"" << d.width << "\"/>\n"
      << "</Image>\n";
  return out.str();
}

inline TilePyramidDescriptor parse_dzi_xml(const std::string& xml, std::string slide_id = {}) {
  auto attr = [&](const std::string& name) {
    const std::regex re(name + "\\s*=\\s*\"([^\"]*)\"");
    std::smatch m;
    if (!std::regex_search(xml, m, re)) fail(ErrorCode::validation, "descriptor missing attribute " + name);
    return m[1].str();
  };
  try {
    return make_descriptor(std::move(slide_id), std::stoi(attr("Width")), std::stoi(attr("Height")),
                           std::stoi(attr("TileSize")), std::stoi(attr("Overlap")),
                           codec::parse_format(attr("Format")));
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::validation, "descriptor has a non-numeric attribute");
  } catch (const std::out_of_range&) {
    fail(ErrorCode::validation, "descriptor attribute out of range");
  }
}

// ---- on-disk layout -------------------------------------------------------------

inline std::filesystem::path descriptor_path(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".dzi");
}

inline std::filesystem::path tile_path(const std::filesystem::path& dir, const TilePyramidDescriptor& d,
                                       int level, int col, int row) {
  return dir / (d.slide_id + "_files") / std::to_string(level) /
         (std::to_string(col) + "_" + std::to_string(row) + "." + d.extension());
}

inline TilePyramidDescriptor load_descriptor(const std::filesystem::path& dir, const std::string& name) {
  const auto bytes = codec::read_file(descriptor_path(dir, name));
  return parse_dzi_xml(std::string(bytes.begin(), bytes.end()), name);
}

/// Every level raster, index = level. Level L-1 is the 2x2 box average of L.
inline std::vector<Raster> build_levels(const Raster& image, int max_level) {
  std::vector<Raster> levels(static_cast<std::size_t>(max_level) + 1);
  levels.back() = image;
  for (int level = max_level - 1; level >= 0; --level)
    levels[static_cast<std::size_t>(level)] = box_downsample(levels[static_cast<std::size_t>(level) + 1], 2);
  return levels;
}

struct BuildOptions {
  int tile_size = 254;
  int overlap = 1;
  codec::TileFormat format = codec::TileFormat::png;
  unsigned workers = 0;  // 0 = hardware concurrency
};

/// Writes `<dir>/<name>.dzi` and `<dir>/<name>_files/<level>/<col>_<row>.<ext>`.
/// Tiles are independent, so the worker count never changes the bytes written.
inline TilePyramidDescriptor build_pyramid(const Raster& image, const std::string& name,
                                           const std::filesystem::path& dir, const BuildOptions& opt = {}) {
  if (image.empty()) fail(ErrorCode::validation, "cannot build a pyramid from an empty image");
  auto desc = make_descriptor(name, image.width, image.height, opt.tile_size, opt.overlap, opt.format);
  const auto levels = build_levels(image, desc.max_level);

  std::error_code ec;
  for (int level = 0; level <= desc.max_level; ++level) {
    std::filesystem::create_directories(dir / (name + "_files") / std::to_string(level), ec);
    if (ec) fail(ErrorCode::io, "cannot create tile directory under " + dir.string() + ": " + ec.message());
  }

  struct Job { int level, col, row; };
  std::vector<Job> jobs;
  for (int level = 0; level <= desc.max_level; ++level)
    for (int row = 0; row < desc.rows(level); ++row)
      for (int col = 0; col < desc.columns(level); ++col) jobs.push_back({level, col, row});

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      try {
        const auto r = desc.tile_rect(job.level, job.col, job.row);
        const auto tile = crop(levels[static_cast<std::size_t>(job.level)], r.x, r.y, r.width, r.height);
        codec::write_file(tile_path(dir, desc, job.level, job.col, job.row), codec::encode(tile, desc.format));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = jobs.size();
      }
    }
  };
  unsigned n = opt.workers ? opt.workers : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(1, jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  const auto xml = to_dzi_xml(desc);
  codec::write_file(descriptor_path(dir, name), std::vector<std::uint8_t>(xml.begin(), xml.end()));
  return desc;
}

/// Stitches one level back together from its tiles, trimming overlap margins.
inline Raster reassemble_level(const std::filesystem::path& dir, const TilePyramidDescriptor& d, int level) {
  const Dims dims = d.level_dims.at(static_cast<std::size_t>(level));
  Raster out(dims.width, dims.height, 3);
  for (int row = 0; row < d.rows(level); ++row) {
    for (int col = 0; col < d.columns(level); ++col) {
      const auto tile = codec::read_image(tile_path(dir, d, level, col, row));
      const auto r = d.tile_rect(level, col, row);
      if (tile.width != r.width || tile.height != r.height)
        fail(ErrorCode::validation, "tile " + tile_path(dir, d, level, col, row).string() + " has unexpected size");
      const int x_begin = col * d.tile_size;
      const int y_begin = row * d.tile_size;
      const int x_end = std::min(dims.width, x_begin + d.tile_size);
      const int y_end = std::min(dims.height, y_begin + d.tile_size);
      for (int y = y_begin; y < y_end; ++y)
        for (int x = x_begin; x < x_end; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = tile.at(x - r.x, y - r.y, c);
    }
  }
  return out;
}

// ---- working resolution --------------------------------------------------------

struct WorkingImage {
  Raster raster;
  double scale_factor = 1.0;  // native pixels per working pixel
};

/// Reduces a scan to the working magnification with box averaging.
/// Integral ratios use exact block averaging; others an area window.
inline WorkingImage downsample_to_working_resolution(const Raster& source, double scan_magnification,
                                                     double target_magnification) {
  if (!(scan_magnification > 0) || !(target_magnification > 0))
    fail(ErrorCode::validation, "magnifications must be positive");
  if (target_magnification > scan_magnification)
    fail(ErrorCode::validation, "target magnification exceeds scan magnification (no upsampling)");
  if (source.empty()) fail(ErrorCode::validation, "source image is empty");
  const double ratio = scan_magnification / target_magnification;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) < 1e-9)
    return {box_downsample(source, static_cast<int>(rounded)), ratio};
  const int w = static_cast<int>(std::ceil(source.width / ratio - 1e-9));
  const int h = static_cast<int>(std::ceil(source.height / ratio - 1e-9));
  return {box_resize(source, w, h), ratio};
}

}  // namespace gigaslide::pyramid
