#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gigaslide/error.hpp"
#include "gigaslide/store.hpp"

namespace gigaslide {

/// Every pipeline constant in one place. Resolution order, lowest first:
/// defaults, config file, environment, command-line flags.
struct Config {
  std::filesystem::path data_dir = "gigaslide-data";
  std::string db_path;  // empty: <data_dir>/gigaslide.db
  int port = 8080;

  int tile_size = 254;
  int overlap = 1;
  std::string tile_format = "png";

  int patch_size = 512;
  int stride = 256;
  double min_tissue_fraction = 0.2;

  double tau = 0.5;
  double min_area_px = 1024;
  double map_scale = 0.125;
  double polygon_epsilon = 2.0;

  double session_cap_minutes = 30;
  std::vector<std::string> classes = store::default_classes();

  std::string database() const { return db_path.empty() ? (data_dir / "gigaslide.db").string() : db_path; }
  std::filesystem::path slides_dir() const { return data_dir / "slides"; }

  void merge_json(const nlohmann::json& j) {
    try {
      if (j.contains("data_dir")) data_dir = j["data_dir"].get<std::string>();
      if (j.contains("db_path")) db_path = j["db_path"].get<std::string>();
      if (j.contains("port")) port = j["port"].get<int>();
      if (j.contains("tile_size")) tile_size = j["tile_size"].get<int>();
      if (j.contains("overlap")) overlap = j["overlap"].get<int>();
      if (j.contains("tile_format")) tile_format = j["tile_format"].get<std::string>();
      if (j.contains("patch_size")) patch_size = j["patch_size"].get<int>();
      if (j.contains("stride")) stride = j["stride"].get<int>();
      if (j.contains("min_tissue_fraction")) min_tissue_fraction = j["min_tissue_fraction"].get<double>();
      if (j.contains("tau")) tau = j["tau"].get<double>();
      if (j.contains("min_area_px")) min_area_px = j["min_area_px"].get<double>();
      if (j.contains("map_scale")) map_scale = j["map_scale"].get<double>();
      if (j.contains("polygon_epsilon")) polygon_epsilon = j["polygon_epsilon"].get<double>();
      if (j.contains("session_cap_minutes")) session_cap_minutes = j["session_cap_minutes"].get<double>();
      if (j.contains("classes")) classes = j["classes"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::validation, std::string("invalid configuration: ") + e.what());
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read config file " + path.string());
    try {
      merge_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::validation, std::string("config file is not valid JSON: ") + e.what());
    }
  }

  void apply_environment() {
    if (const char* v = std::getenv("GIGASLIDE_DATA"); v && *v) data_dir = v;
    if (const char* v = std::getenv("GIGASLIDE_DB"); v && *v) db_path = v;
    if (const char* v = std::getenv("GIGASLIDE_PORT"); v && *v) {
      try {
        port = std::stoi(v);
      } catch (const std::exception&) {
        fail(ErrorCode::validation, "GIGASLIDE_PORT is not an integer");
      }
    }
  }

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) fail(ErrorCode::validation, std::string("config: ") + what);
    };
    require(port > 0 && port < 65536, "port must be in 1..65535");
    require(tile_size >= 1, "tile_size must be >= 1");
    require(overlap >= 0 && overlap < tile_size, "overlap must be in [0, tile_size)");
    require(tile_format == "png" || tile_format == "jpeg" || tile_format == "jpg", "tile_format must be png or jpeg");
    require(stride >= 1 && patch_size >= stride, "need patch_size >= stride >= 1");
    require(min_tissue_fraction >= 0 && min_tissue_fraction <= 1, "min_tissue_fraction must be in [0, 1]");
    require(tau > 0 && tau < 1, "tau must be in (0, 1)");
    require(min_area_px >= 0, "min_area_px must be >= 0");
    require(map_scale > 0 && map_scale <= 1, "map_scale must be in (0, 1]");
    require(polygon_epsilon >= 0, "polygon_epsilon must be >= 0");
    require(session_cap_minutes > 0, "session_cap_minutes must be > 0");
    require(!classes.empty(), "classes must not be empty");
  }

  nlohmann::json to_json() const {
    return {{"data_dir", data_dir.string()}, {"db_path", database()}, {"port", port},
            {"tile_size", tile_size}, {"overlap", overlap}, {"tile_format", tile_format},
            {"patch_size", patch_size}, {"stride", stride}, {"min_tissue_fraction", min_tissue_fraction},
            {"tau", tau}, {"min_area_px", min_area_px}, {"map_scale", map_scale},
            {"polygon_epsilon", polygon_epsilon}, {"session_cap_minutes", session_cap_minutes},
            {"classes", classes}};
  }
};

}  // namespace gigaslide
