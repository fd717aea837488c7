#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gigaslide/api.hpp"
#include "gigaslide/config.hpp"
#include "gigaslide/error.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/image_codec.hpp"
#include "gigaslide/pipeline.hpp"
#include "gigaslide/reports.hpp"
#include "gigaslide/semisup.hpp"
#include "gigaslide/store.hpp"

namespace gigaslide::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.pop_back();
    std::size_t b = 0;
    while (b < item.size() && std::isspace(static_cast<unsigned char>(item[b]))) ++b;
    if (b < item.size()) out.push_back(item.substr(b));
  }
  return out;
}

inline std::string read_text(const fs::path& p) {
  const auto bytes = codec::read_file(p);
  return {bytes.begin(), bytes.end()};
}

// ---- training manifests ----------------------------------------------------------------
//
// Two shapes. Image mode: `path,label` rows (unlabeled: `path`), paths relative
// to the manifest. Feature mode: a header `label,f0,f1,...` (unlabeled:
// `f0,f1,...`) with precomputed feature vectors.

struct Manifest {
  bool features_mode = false;
  std::vector<semisup::FeatureVector> features;  // feature mode
  std::vector<fs::path> images;                  // image mode
  std::vector<int> labels;                       // empty for unlabeled manifests
};

inline Manifest read_manifest(const fs::path& path, bool labeled) {
  std::istringstream in(read_text(path));
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_list(line);
    if (first) {
      first = false;
      const std::string head = cells.empty() ? "" : cells[0];
      if (head == "label" || head == "f0") {
        m.features_mode = true;
        if (labeled && head != "label") fail(ErrorCode::validation, path.string() + ": labeled feature manifest must start with 'label'");
        continue;
      }
      if (head == "path") continue;
    }
    auto bad = [&](const std::string& why) {
      fail(ErrorCode::validation, path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    try {
      if (m.features_mode) {
        std::size_t start = 0;
        if (labeled) {
          if (cells.size() < 2) bad("expected label and features");
          m.labels.push_back(std::stoi(cells[0]));
          start = 1;
        }
        semisup::FeatureVector v;
        for (std::size_t i = start; i < cells.size(); ++i) v.push_back(std::stod(cells[i]));
        if (v.empty()) bad("empty feature vector");
        m.features.push_back(std::move(v));
      } else {
        if (cells.empty() || (labeled && cells.size() < 2)) bad(labeled ? "expected path,label" : "expected path");
        fs::path p = cells[0];
        if (p.is_relative()) p = path.parent_path() / p;
        m.images.push_back(p);
        if (labeled) m.labels.push_back(std::stoi(cells[1]));
      }
    } catch (const std::invalid_argument&) {
      bad("not a number");
    } catch (const std::out_of_range&) {
      bad("number out of range");
    }
  }
  return m;
}

inline std::vector<semisup::FeatureVector> manifest_features(const Manifest& m, const semisup::FeatureExtractor* f) {
  if (m.features_mode) return m.features;
  std::vector<Raster> imgs;
  for (const auto& p : m.images) imgs.push_back(codec::read_image(p));
  return semisup::extract_all(*f, imgs);
}

// ---- command runner -----------------------------------------------------------------------

/// Parses and runs one command. Returns the process exit code; every error is
/// reported on `err` as "error: <code>: <message>".
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"gigaslide: whole-slide annotation back end"};
  app.require_subcommand(1);

  std::string config_file, data_dir, db_path;
  app.add_option("--config", config_file, "JSON config file");
  app.add_option("--data", data_dir, "data directory (overrides GIGASLIDE_DATA)");
  app.add_option("--db", db_path, "SQLite database path (overrides GIGASLIDE_DB)");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "tile an image and register it as a slide");
  std::string ingest_image, ingest_name, tile_format;
  double scan_mag = 10, target_mag = 10;
  bool force = false;
  std::optional<int> tile_size, overlap;
  ingest->add_option("image", ingest_image, "source image (png, jpeg, ppm, pgm)")->required();
  ingest->add_option("--name", ingest_name, "slide name; default: file stem");
  ingest->add_option("--scan-mag", scan_mag, "magnification of the source scan");
  ingest->add_option("--target-mag", target_mag, "working magnification");
  ingest->add_option("--tile-size", tile_size);
  ingest->add_option("--overlap", overlap);
  ingest->add_option("--format", tile_format, "png or jpeg");
  ingest->add_flag("--force", force, "rebuild an existing slide");

  // predict
  auto* predict = app.add_subcommand("predict", "turn tumor probabilities into pending proposals");
  std::string predict_slide, model_file, predictions_file, created_by = "model";
  std::optional<double> tau, min_area;
  predict->add_option("--slide", predict_slide)->required();
  auto* model_opt = predict->add_option("--model", model_file, "trained model document");
  auto* preds_opt = predict->add_option("--predictions", predictions_file, "slide,x,y,prob file");
  model_opt->excludes(preds_opt);
  preds_opt->excludes(model_opt);
  predict->add_option("--created-by", created_by);
  predict->add_option("--tau", tau);
  predict->add_option("--min-area", min_area);

  auto* predict_ingest = app.add_subcommand("predict-ingest", "predict from a probability file");
  predict_ingest->add_option("slide", predict_slide)->required();
  predict_ingest->add_option("file", predictions_file)->required();
  predict_ingest->add_option("--created-by", created_by);

  // train
  auto* train = app.add_subcommand("train", "teacher then student on patch manifests");
  std::string labeled_path, unlabeled_path, heldout_path, model_out;
  semisup::Hyperparameters hyper;
  std::uint64_t seed = 0;
  int tumor_class = 1;
  train->add_option("--labeled", labeled_path)->required();
  train->add_option("--unlabeled", unlabeled_path)->required();
  train->add_option("--out", model_out)->required();
  train->add_option("--heldout", heldout_path, "labeled manifest to report accuracy on");
  train->add_option("--seed", seed)->required();
  train->add_option("--epochs", hyper.epochs);
  train->add_option("--lr", hyper.learning_rate);
  train->add_option("--batch-size", hyper.batch_size);
  train->add_option("--tumor-class", tumor_class);

  // batch
  auto* batch = app.add_subcommand("batch", "batch administration");
  batch->require_subcommand(1);
  auto* batch_create = batch->add_subcommand("create");
  auto* batch_assign = batch->add_subcommand("assign");
  auto* batch_list = batch->add_subcommand("list");
  std::string batch_name, slides_csv, users_csv;
  bool dense = false;
  batch_create->add_option("name", batch_name)->required();
  batch_create->add_option("--slides", slides_csv, "comma-separated slide names")->required();
  batch_create->add_flag("--dense", dense, "every annotator labels every slide");
  batch_assign->add_option("name", batch_name)->required();
  batch_assign->add_option("--users", users_csv, "comma-separated user names")->required();

  // report
  auto* report = app.add_subcommand("report", "agreement, confusion, timing, overlap, batch_comparison");
  std::string report_kind, report_out, report_format = "csv";
  metrics::ReportFilter filter;
  std::string annotators_csv;
  report->add_option("kind", report_kind)->required();
  report->add_option("--out", report_out, "output file; default: stdout");
  report->add_option("--format", report_format)->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--batch", filter.batch);
  report->add_flag("--dense", filter.dense_only);
  report->add_option("--expert", filter.expert);
  report->add_option("--annotators", annotators_csv);
  report->add_option("--group-by", filter.group_by);
  report->add_option("--batch-a", filter.batch_a);
  report->add_option("--batch-b", filter.batch_b);

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  std::optional<int> port;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port);
  serve->add_option("--host", host);

  // user
  auto* user = app.add_subcommand("user", "user administration");
  user->require_subcommand(1);
  auto* user_add = user->add_subcommand("add");
  auto* user_list = user->add_subcommand("list");
  std::string user_name, role = "annotator", token;
  user_add->add_option("name", user_name)->required();
  user_add->add_option("--role", role)->check(CLI::IsMember({"annotator", "expert", "admin"}));
  user_add->add_option("--token", token);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    Config cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    cfg.apply_environment();
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!db_path.empty()) cfg.db_path = db_path;
    if (tile_size) cfg.tile_size = *tile_size;
    if (overlap) cfg.overlap = *overlap;
    if (!tile_format.empty()) cfg.tile_format = tile_format;
    if (tau) cfg.tau = *tau;
    if (min_area) cfg.min_area_px = *min_area;
    if (port) cfg.port = *port;
    cfg.validate();

    if (*train) {
      std::unique_ptr<semisup::FeatureExtractor> extractor;
      const auto labeled = read_manifest(labeled_path, true);
      const auto unlabeled = read_manifest(unlabeled_path, false);
      if (labeled.features_mode != unlabeled.features_mode)
        fail(ErrorCode::validation, "labeled and unlabeled manifests must use the same form");
      if (!labeled.features_mode) extractor = std::make_unique<semisup::ColorStatsExtractor>();
      hyper.seed = seed;
      semisup::LabeledFeatures lf;
      lf.features = manifest_features(labeled, extractor.get());
      lf.labels = labeled.labels;
      int max_label = 1;
      for (int l : lf.labels) max_label = std::max(max_label, l);
      lf.classes = static_cast<std::size_t>(max_label) + 1;

      const auto teacher = semisup::train_teacher(lf, hyper);
      const auto pseudo = semisup::pseudo_label(teacher.head, manifest_features(unlabeled, extractor.get()));
      const auto student = semisup::train_student(lf, pseudo, hyper);

      semisup::Model model{student.head, extractor ? extractor->id() : "precomputed", hyper, tumor_class};
      codec::write_file(model_out, [&] {
        const auto s = semisup::to_json(model).dump(2);
        return std::vector<std::uint8_t>(s.begin(), s.end());
      }());

      const auto eval = heldout_path.empty() ? labeled : read_manifest(heldout_path, true);
      const auto eval_x = manifest_features(eval, extractor.get());
      out << "labeled: " << lf.features.size() << ", pseudo-labeled: " << pseudo.size() << "\n";
      out << "teacher accuracy: " << semisup::accuracy(teacher.head, eval_x, eval.labels) << "\n";
      out << "student accuracy: " << semisup::accuracy(student.head, eval_x, eval.labels) << "\n";
      out << "model written to " << model_out << "\n";
      return 0;
    }

    if (const auto parent = fs::path(cfg.database()).parent_path(); !parent.empty()) fs::create_directories(parent);
    store::Store db(cfg.database(), cfg.classes);

    if (*ingest) {
      const auto img = codec::read_image(ingest_image);
      const auto name = ingest_name.empty() ? fs::path(ingest_image).stem().string() : ingest_name;
      const auto slide = pipeline::ingest(db, cfg, img, name, {scan_mag, target_mag, force});
      const auto desc = pyramid::load_descriptor(cfg.slides_dir(), name);
      out << "ingested " << slide.name << ": " << slide.width << "x" << slide.height << ", "
          << desc.max_level + 1 << " levels, scale factor " << slide.scale_factor << ", tissue "
          << slide.tissue_fraction * 100 << "%\n";
      out << "descriptor: " << pyramid::descriptor_path(cfg.slides_dir(), name).string() << "\n";
    } else if (*predict || *predict_ingest) {
      if (*predict && model_file.empty() && predictions_file.empty()) {
        err << "usage error: predict needs exactly one of --model or --predictions\n";
        return 2;
      }
      std::vector<heatmap::PatchPrediction> preds;
      if (!model_file.empty()) {
        const auto model = semisup::model_from_json(json::parse(read_text(model_file)));
        preds = pipeline::predict_with_model(db, cfg, predict_slide, model);
      } else {
        preds = heatmap::parse_predictions_csv(read_text(predictions_file));
        const auto grid = pipeline::patch_grid_for(db, cfg, predict_slide);
        std::string bad;
        for (std::size_t i = 0; i < preds.size(); ++i)
          if (!grid.on_grid(preds[i].x, preds[i].y)) bad += " " + std::to_string(i + 1);
        if (!bad.empty()) fail(ErrorCode::validation, "off-grid prediction rows:" + bad);
      }
      const auto summary = pipeline::run_heatmap(db, cfg, predict_slide, preds, created_by);
      if (summary.empty_input) out << "note: no predictions; heatmap is all zero\n";
      out << "regions: " << summary.polygons.size() << "\n";
      out << "proposals created: " << summary.annotations_created << "\n";
    } else if (*batch) {
      if (*batch_create) {
        const auto b = db.create_batch(batch_name, split_list(slides_csv), dense);
        out << "created batch " << b.name << " (" << b.slide_names.size() << " slides, dense="
            << (b.dense ? "true" : "false") << ")\n";
      } else if (*batch_assign) {
        const auto b = db.assign_users(batch_name, split_list(users_csv));
        out << "batch " << b.name << " assigned to " << b.assigned_users.size() << " users\n";
      } else if (*batch_list) {
        for (const auto& b : db.list_batches()) {
          out << b.name << "\tslides=" << b.slide_names.size() << "\tdense=" << (b.dense ? "true" : "false")
              << "\tusers=";
          bool first = true;
          for (const auto& u : b.assigned_users) out << (first ? "" : ",") << u, first = false;
          out << "\n";
        }
      }
    } else if (*report) {
      filter.cap_minutes = cfg.session_cap_minutes;
      filter.annotators = split_list(annotators_csv);
      const auto doc = metrics::build_report(db, report_kind, filter);
      const std::string text = report_format == "json" ? doc.dump(2) + "\n" : metrics::report_table(doc);
      if (report_out.empty())
        out << text;
      else
        codec::write_file(report_out, std::vector<std::uint8_t>(text.begin(), text.end()));
    } else if (*serve) {
      api::Server server(db, cfg);
      if (!server.bind(host, cfg.port))
        fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(cfg.port) + " (port in use?)");
      out << "listening on http://" << host << ":" << cfg.port << std::endl;
      if (!server.listen()) fail(ErrorCode::io, "server stopped unexpectedly");
    } else if (*user) {
      if (*user_add) {
        const auto u = db.add_user(user_name, store::parse_role(role), token);
        out << u.name << "\t" << store::to_string(u.role) << "\t" << u.token << "\n";
      } else if (*user_list) {
        for (const auto& u : db.list_users()) out << u.name << "\t" << store::to_string(u.role) << "\n";
      }
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"gigaslide"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace gigaslide::cli
