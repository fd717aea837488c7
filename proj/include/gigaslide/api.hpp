#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "gigaslide/config.hpp"
#include "gigaslide/error.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/pipeline.hpp"
#include "gigaslide/pyramid.hpp"
#include "gigaslide/reports.hpp"
#include "gigaslide/store.hpp"

namespace gigaslide::api {

using nlohmann::json;

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct JobStatus {
  std::int64_t id = 0;
  std::string slide;
  std::string state = "queued";  // queued | running | done | failed
  std::string message;
  std::size_t polygons = 0;
  std::size_t annotations_created = 0;
};

inline json to_json(const JobStatus& j) {
  return {{"id", j.id}, {"slide", j.slide}, {"state", j.state}, {"message", j.message},
          {"polygons", j.polygons}, {"annotations_created", j.annotations_created}};
}

/// REST surface over the store and the heatmap pipeline. Tile and
/// descriptor reads go straight to the pyramid directory.
class Server {
 public:
  Server(store::Store& db, Config cfg) : db_(db), cfg_(std::move(cfg)) {
    // httplib defaults to SO_REUSEPORT, which lets a second server share a
    // port that is already taken; a busy port must fail the bind instead.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  ~Server() {
    stop();
    join_jobs();
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
  int bind_any(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
  bool listen() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() const { http_.wait_until_ready(); }

  /// Blocks until every queued prediction job has finished.
  void join_jobs() {
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(jobs_mutex_);
      threads.swap(threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }

  std::optional<JobStatus> job(std::int64_t id) const {
    std::lock_guard lock(jobs_mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;

  static void send_json(Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
  }

  template <class F>
  static auto guarded(F f) {
    return [f](const Request& req, Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", std::string("malformed JSON body: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static std::string token_of(const Request& req) {
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) return auth.substr(7);
    return req.get_header_value("X-Api-Token");
  }

  store::User authenticate(const Request& req) const {
    const auto user = db_.user_by_token(token_of(req));
    if (!user) fail(ErrorCode::forbidden, "missing or invalid API token");
    return *user;
  }

  static void require_role(const store::User& u, std::initializer_list<store::Role> roles) {
    for (auto r : roles)
      if (u.role == r) return;
    fail(ErrorCode::forbidden, "role '" + store::to_string(u.role) + "' may not use this route");
  }

  static json parse_body(const Request& req) {
    if (req.body.empty()) fail(ErrorCode::bad_request, "request body is empty");
    return json::parse(req.body);
  }

  static std::int64_t id_param(const Request& req, std::size_t idx = 1) { return std::stoll(req.matches[idx].str()); }

  static bool plain_name(const std::string& name) {
    return !name.empty() && name.find_first_of("/\\") == std::string::npos && name.find("..") == std::string::npos;
  }

  void routes() {
    // ---- tiles ----
    http_.Get(R"(/tiles/(.+)\.dzi)", guarded([this](const Request& req, Response& res) {
      const auto slide = req.matches[1].str();
      if (!plain_name(slide) || !db_.get_slide(slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      const auto bytes = codec::read_file(pyramid::descriptor_path(cfg_.slides_dir(), slide));
      serve_immutable(req, res, std::string(bytes.begin(), bytes.end()), "application/xml");
    }));

    http_.Get(R"(/tiles/(.+)_files/(\d+)/(\d+)_(\d+)\.([A-Za-z]+))", guarded([this](const Request& req, Response& res) {
      const auto slide = req.matches[1].str();
      if (!plain_name(slide) || !db_.get_slide(slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      const auto desc = pyramid::load_descriptor(cfg_.slides_dir(), slide);
      int level, col, row;
      try {
        level = std::stoi(req.matches[2].str());
        col = std::stoi(req.matches[3].str());
        row = std::stoi(req.matches[4].str());
      } catch (const std::exception&) {
        fail(ErrorCode::not_found, "tile coordinates out of range");
      }
      if (req.matches[5].str() != desc.extension() || !desc.has_tile(level, col, row))
        fail(ErrorCode::not_found, "no such tile");
      const auto bytes = codec::read_file(pyramid::tile_path(cfg_.slides_dir(), desc, level, col, row));
      serve_immutable(req, res, std::string(bytes.begin(), bytes.end()), codec::content_type(desc.format));
    }));

    // ---- batches ----
    http_.Get(R"(/api/batches/([^/]+)/manifest)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto batch = db_.get_batch(req.matches[1].str());
      if (!batch) fail(ErrorCode::not_found, "unknown batch '" + req.matches[1].str() + "'");
      if (!batch->assigned_users.count(user.name))
        fail(ErrorCode::forbidden, "user '" + user.name + "' is not assigned to batch '" + batch->name + "'");
      json slides = json::array();
      for (const auto& s : batch->slide_names)
        slides.push_back({{"slide_name", s},
                          {"descriptor_url", "/tiles/" + s + ".dzi"},
                          {"class_hidden", user.role != store::Role::expert},
                          {"pending_proposals", db_.pending_count(batch->name, s, user.name)}});
      send_json(res, 200, {{"batch_name", batch->name}, {"dense", batch->dense}, {"slides", slides}});
    }));

    // ---- annotations ----
    http_.Get("/api/annotations", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      if (!req.has_param("batch")) fail(ErrorCode::bad_request, "query parameter 'batch' is required");
      json out = json::array();
      for (const auto& a : db_.query_annotations(req.get_param_value("batch"), req.get_param_value("slide"), user.name))
        out.push_back(store::to_json(a));
      send_json(res, 200, out);
    }));

    http_.Post("/api/annotations", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      auto a = store::annotation_from_json(parse_body(req));
      a.id = 0;
      a.user_name = user.name;
      a.created_at = 0;
      a.created_by = user.name;
      if (a.source == store::Source::model) require_role(user, {store::Role::expert, store::Role::admin});
      const auto id = db_.put_annotation(a);
      send_json(res, 201, {{"id", id}});
    }));

    http_.Get(R"(/api/annotations/(\d+))", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      send_json(res, 200, store::to_json(db_.annotation_for(id_param(req), user.name)));
    }));

    http_.Delete(R"(/api/annotations/(\d+))", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      db_.delete_annotation(id_param(req), user.name);
      send_json(res, 200, {{"deleted", id_param(req)}});
    }));

    http_.Put(R"(/api/annotations/(\d+)/validation)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto body = parse_body(req);
      const auto status = store::parse_validation(body.at("status").get<std::string>());
      send_json(res, 200, store::to_json(db_.set_validation(id_param(req), status, user.name)));
    }));

    http_.Put(R"(/api/annotations/(\d+)/style)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto current = db_.annotation_for(id_param(req), user.name);
      const auto style = store::style_from_json(parse_body(req), current.style);
      send_json(res, 200, store::to_json(db_.set_style(id_param(req), style, user.name)));
    }));

    http_.Put(R"(/api/annotations/(\d+)/label)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto body = parse_body(req);
      send_json(res, 200, store::to_json(db_.set_label(id_param(req), body.at("label").get<std::string>(), user.name)));
    }));

    // ---- slide labels ----
    http_.Put(R"(/api/slides/([^/]+)/label)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto slide = req.matches[1].str();
      if (!db_.get_slide(slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      if (!db_.can_access_slide(user.name, slide))
        fail(ErrorCode::forbidden, "slide '" + slide + "' is not in any of your batches");
      const auto body = parse_body(req);
      store::WsiLabel label{slide, user.name, body.at("class_label").get<std::string>(),
                            body.value("certainty", 100), body.value("observations", std::string())};
      const auto stored = db_.upsert_wsi_label(label);
      send_json(res, 200, {{"slide", stored.slide_name}, {"user", stored.user_name}, {"class_label", stored.class_label},
                           {"certainty", stored.certainty}, {"observations", stored.observations}});
    }));

    http_.Get(R"(/api/slides/([^/]+)/label)", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto label = db_.get_wsi_label(req.matches[1].str(), user.name);
      if (!label) fail(ErrorCode::not_found, "no label for this slide");
      send_json(res, 200, {{"slide", label->slide_name}, {"user", label->user_name}, {"class_label", label->class_label},
                           {"certainty", label->certainty}, {"observations", label->observations}});
    }));

    // ---- timing ----
    http_.Post("/api/sessions/events", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      const auto body = parse_body(req);
      const auto slide = body.at("slide").get<std::string>();
      const auto batch = body.at("batch").get<std::string>();
      const auto event = body.at("event").get<std::string>();
      const double ts = body.at("timestamp").get<double>();
      const auto b = db_.get_batch(batch);
      if (!b) fail(ErrorCode::not_found, "unknown batch '" + batch + "'");
      if (!b->assigned_users.count(user.name)) fail(ErrorCode::forbidden, "not assigned to batch '" + batch + "'");
      if (std::find(b->slide_names.begin(), b->slide_names.end(), slide) == b->slide_names.end())
        fail(ErrorCode::validation, "slide '" + slide + "' is not in batch '" + batch + "'");
      const auto key = std::make_tuple(user.name, slide, batch);
      if (event == "open") {
        std::lock_guard lock(sessions_mutex_);
        open_sessions_[key] = ts;  // a second open supersedes the first
        send_json(res, 200, {{"ack", "open"}});
      } else if (event == "close") {
        double opened;
        {
          std::lock_guard lock(sessions_mutex_);
          const auto it = open_sessions_.find(key);
          if (it == open_sessions_.end()) fail(ErrorCode::conflict, "close event without a matching open");
          opened = it->second;
          open_sessions_.erase(it);
        }
        const auto s = db_.record_session(user.name, slide, batch, opened, ts);
        send_json(res, 200, {{"ack", "close"}, {"session_id", s.id}, {"minutes", (s.closed_at - s.opened_at) / 60.0}});
      } else {
        fail(ErrorCode::bad_request, "event must be 'open' or 'close'");
      }
    }));

    // ---- predictions ----
    http_.Post(R"(/api/predictions/([^/]+))", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      require_role(user, {store::Role::expert, store::Role::admin});
      const auto slide = req.matches[1].str();
      if (!db_.get_slide(slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      auto rows = heatmap::parse_predictions_csv(req.body);
      check_predictions(slide, rows);
      const auto id = enqueue(slide, std::move(rows), user.name);
      send_json(res, 202, {{"job_id", id}, {"state", "queued"}});
    }));

    http_.Get(R"(/api/predictions/([^/]+)/jobs/(\d+))", guarded([this](const Request& req, Response& res) {
      authenticate(req);
      const auto j = job(id_param(req, 2));
      if (!j || j->slide != req.matches[1].str()) fail(ErrorCode::not_found, "unknown job");
      send_json(res, 200, to_json(*j));
    }));

    http_.Get(R"(/api/predictions/([^/]+))", guarded([this](const Request& req, Response& res) {
      authenticate(req);
      const auto slide = req.matches[1].str();
      std::optional<JobStatus> latest;
      {
        std::lock_guard lock(jobs_mutex_);
        for (const auto& [id, j] : jobs_)
          if (j.slide == slide) latest = j;
      }
      if (!latest) fail(ErrorCode::not_found, "no prediction job for slide '" + slide + "'");
      send_json(res, 200, to_json(*latest));
    }));

    // ---- reports ----
    http_.Get(R"(/api/reports/([A-Za-z_]+))", guarded([this](const Request& req, Response& res) {
      const auto user = authenticate(req);
      require_role(user, {store::Role::expert, store::Role::admin});
      metrics::ReportFilter f;
      f.batch = req.get_param_value("batch");
      f.dense_only = req.get_param_value("dense") == "true" || req.get_param_value("dense") == "1";
      f.expert = req.get_param_value("expert");
      if (req.has_param("group_by")) f.group_by = req.get_param_value("group_by");
      f.batch_a = req.get_param_value("batch_a");
      f.batch_b = req.get_param_value("batch_b");
      f.cap_minutes = cfg_.session_cap_minutes;
      if (req.has_param("annotators")) {
        std::stringstream ss(req.get_param_value("annotators"));
        for (std::string name; std::getline(ss, name, ',');)
          if (!name.empty()) f.annotators.push_back(name);
      }
      const auto doc = metrics::build_report(db_, req.matches[1].str(), f);
      if (req.get_param_value("format") == "csv") {
        res.status = 200;
        res.set_content(metrics::report_table(doc), "text/csv");
      } else {
        send_json(res, 200, doc);
      }
    }));
  }

  static void serve_immutable(const Request& req, Response& res, std::string body, const std::string& type) {
    const auto etag = "\"" + fnv1a_hex(body) + "\"";
    res.set_header("ETag", etag);
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
    if (req.get_header_value("If-None-Match") == etag) {
      res.status = 304;
      return;
    }
    res.status = 200;
    res.set_content(std::move(body), type);
  }

  void check_predictions(const std::string& slide, const std::vector<heatmap::PatchPrediction>& rows) const {
    const auto grid = pipeline::patch_grid_for(db_, cfg_, slide);
    std::ostringstream bad;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& p = rows[i];
      if (p.slide_name != slide || !grid.on_grid(p.x, p.y) || !(p.prob >= 0 && p.prob <= 1)) {
        bad << ' ' << i + 1;
        ++n;
      }
    }
    if (n) fail(ErrorCode::validation, "invalid prediction rows (wrong slide, off-grid or prob outside [0,1]):" + bad.str());
  }

  std::int64_t enqueue(const std::string& slide, std::vector<heatmap::PatchPrediction> rows, const std::string& by) {
    std::lock_guard lock(jobs_mutex_);
    const auto id = ++next_job_;
    JobStatus queued;
    queued.id = id;
    queued.slide = slide;
    jobs_[id] = queued;
    threads_.emplace_back([this, id, slide, rows = std::move(rows), by] {
      std::mutex* slide_lock;
      {
        std::lock_guard l(jobs_mutex_);
        slide_lock = &slide_locks_[slide];
        jobs_[id].state = "running";
      }
      std::lock_guard serial(*slide_lock);
      JobStatus done;
      done.id = id;
      done.slide = slide;
      try {
        const auto summary = pipeline::run_heatmap(db_, cfg_, slide, rows, by);
        done.state = "done";
        done.polygons = summary.polygons.size();
        done.annotations_created = summary.annotations_created;
        if (summary.empty_input) done.message = "no predictions supplied; heatmap is all zero";
      } catch (const std::exception& e) {
        done.state = "failed";
        done.message = e.what();
      }
      std::lock_guard l(jobs_mutex_);
      jobs_[id] = done;
    });
    return id;
  }

  store::Store& db_;
  Config cfg_;
  httplib::Server http_;

  std::mutex sessions_mutex_;
  std::map<std::tuple<std::string, std::string, std::string>, double> open_sessions_;

  mutable std::mutex jobs_mutex_;
  std::map<std::int64_t, JobStatus> jobs_;
  std::map<std::string, std::mutex> slide_locks_;
  std::vector<std::thread> threads_;
  std::int64_t next_job_ = 0;
};

}  // namespace gigaslide::api
