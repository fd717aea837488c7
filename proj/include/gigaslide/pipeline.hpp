#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gigaslide/config.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/image_codec.hpp"
#include "gigaslide/pyramid.hpp"
#include "gigaslide/semisup.hpp"
#include "gigaslide/store.hpp"
#include "gigaslide/tissue.hpp"

namespace gigaslide::pipeline {

inline std::filesystem::path mask_path(const Config& cfg, const std::string& slide) {
  return cfg.slides_dir() / (slide + "_mask.png");
}

struct IngestOptions {
  double scan_magnification = 10;
  double target_magnification = 10;
  bool force = false;
};

/// Downsample, tile, compute the tissue mask and register the slide.
/// With `force`, an existing slide of the same name is rebuilt in place.
inline store::Slide ingest(store::Store& db, const Config& cfg, const Raster& source, const std::string& name,
                           const IngestOptions& opt) {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos || name.find("..") != std::string::npos)
    fail(ErrorCode::validation, "slide name must be a plain file-name component");
  if (db.get_slide(name) && !opt.force) fail(ErrorCode::conflict, "slide '" + name + "' already exists");
  auto working = pyramid::downsample_to_working_resolution(source, opt.scan_magnification, opt.target_magnification);

  const auto dir = cfg.slides_dir();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
  std::filesystem::remove_all(dir / (name + "_files"), ec);

  pyramid::BuildOptions build;
  build.tile_size = cfg.tile_size;
  build.overlap = cfg.overlap;
  build.format = codec::parse_format(cfg.tile_format);
  pyramid::build_pyramid(working.raster, name, dir, build);

  const auto tissue = pyramid::tissue_mask(working.raster);
  Raster mask_img(tissue.mask.width, tissue.mask.height, 1);
  for (std::size_t i = 0; i < tissue.mask.bits.size(); ++i) mask_img.pixels[i] = tissue.mask.bits[i] ? 255 : 0;
  codec::write_file(mask_path(cfg, name), codec::encode_png(mask_img));

  store::Slide slide;
  slide.name = name;
  slide.width = working.raster.width;
  slide.height = working.raster.height;
  slide.scale_factor = working.scale_factor;
  slide.scan_magnification = opt.scan_magnification;
  slide.target_magnification = opt.target_magnification;
  slide.tile_format = codec::extension(build.format);
  slide.otsu_threshold = tissue.threshold_used;
  slide.tissue_fraction = tissue.tissue_fraction();
  db.add_slide(slide, opt.force);
  return slide;
}

inline BinaryMask load_mask(const Config& cfg, const std::string& slide) {
  const auto img = codec::decode_png(codec::read_file(mask_path(cfg, slide)), 1);
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.bits[i] = img.pixels[i] > 127;
  return m;
}

inline store::Slide require_slide(const store::Store& db, const std::string& name) {
  auto s = db.get_slide(name);
  if (!s) fail(ErrorCode::not_found, "unknown slide '" + name + "'");
  return *s;
}

inline pyramid::PatchGrid patch_grid_for(const store::Store& db, const Config& cfg, const std::string& slide_name) {
  const auto slide = require_slide(db, slide_name);
  return pyramid::extract_patch_grid(slide.width, slide.height, load_mask(cfg, slide_name), cfg.patch_size, cfg.stride,
                                     cfg.min_tissue_fraction);
}

/// Full-resolution working raster, stitched from the top pyramid level.
inline Raster load_working_raster(const Config& cfg, const std::string& slide) {
  const auto desc = pyramid::load_descriptor(cfg.slides_dir(), slide);
  return pyramid::reassemble_level(cfg.slides_dir(), desc, desc.max_level);
}

struct ProposalSummary {
  std::vector<heatmap::RegionPolygon> polygons;  // working-resolution coordinates
  std::size_t annotations_created = 0;           // over every batch and user view
  bool empty_input = false;
};

/// Predictions -> heatmap -> mask -> polygons -> pending proposals in every
/// batch holding the slide.
inline ProposalSummary run_heatmap(store::Store& db, const Config& cfg, const std::string& slide_name,
                                   const std::vector<heatmap::PatchPrediction>& predictions,
                                   const std::string& created_by = "model") {
  const auto slide = require_slide(db, slide_name);
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i].slide_name != slide_name)
      fail(ErrorCode::validation, "prediction row " + std::to_string(i + 1) + " names slide '" +
                                      predictions[i].slide_name + "', expected '" + slide_name + "'");
  const auto grid = patch_grid_for(db, cfg, slide_name);
  const auto map = heatmap::interpolate(predictions, grid, cfg.map_scale);
  const auto mask = heatmap::threshold_and_filter(map, cfg.tau, cfg.min_area_px);
  ProposalSummary summary;
  summary.empty_input = map.empty_input;
  summary.polygons = heatmap::extract_polygons(mask, {cfg.polygon_epsilon, 1.0 / cfg.map_scale});
  std::vector<Polygon> shapes;
  for (auto& p : summary.polygons) {
    p.scale_factor = slide.scale_factor;
    shapes.push_back(p.vertices);
  }
  db.replace_predictions(slide_name, predictions);
  for (const auto& batch : db.batches_containing(slide_name))
    summary.annotations_created += db.replace_model_proposals(batch, slide_name, shapes, created_by).size();
  return summary;
}

inline std::vector<heatmap::PatchPrediction> predict_with_model(const store::Store& db, const Config& cfg,
                                                                const std::string& slide_name,
                                                                const semisup::Model& model) {
  const auto extractor = semisup::make_extractor(model.feature_extractor);
  if (extractor->dim() != model.head.feature_dim)
    fail(ErrorCode::validation, "model feature dimension does not match its extractor");
  const auto grid = patch_grid_for(db, cfg, slide_name);
  if (grid.kept.empty()) return {};
  return semisup::predict_patches(model.head, *extractor, grid, load_working_raster(cfg, slide_name), slide_name,
                                  model.tumor_class);
}

}  // namespace gigaslide::pipeline
