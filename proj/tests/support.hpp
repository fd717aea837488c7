#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <thread>

#include "gigaslide/raster.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "gigaslide") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline gigaslide::Raster random_raster(std::mt19937_64& rng, int w, int h, int channels = 3) {
  gigaslide::Raster r(w, h, channels);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return r;
}

// White-ish background with an H&E-like purple disk: low green inside the disk.
inline gigaslide::Raster stained_blob(int w, int h, double cx, double cy, double radius) {
  gigaslide::Raster r(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool in = std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= radius;
      r.at(x, y, 0) = in ? 170 : 242;
      r.at(x, y, 1) = in ? 60 : 240;
      r.at(x, y, 2) = in ? 165 : 238;
    }
  return r;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace testing_support
