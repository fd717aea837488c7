#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gigaslide/error.hpp"
#include "gigaslide/geometry.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/sqlite.hpp"

namespace gigaslide::store {

/// The seven spindle-cell neoplasm classes of the skin use case.
inline std::vector<std::string> default_classes() { return {"lm", "lms", "df", "dfs", "mfc", "fxa", "cef"}; }

enum class Role { annotator, expert, admin };
enum class Kind { polygon, point };
enum class Source { manual, model };
enum class Validation { pending, accepted, rejected };

inline std::string to_string(Role r) {
  return r == Role::annotator ? "annotator" : r == Role::expert ? "expert" : "admin";
}
inline std::string to_string(Kind k) { return k == Kind::polygon ? "polygon" : "point"; }
inline std::string to_string(Source s) { return s == Source::manual ? "manual" : "model"; }
inline std::string to_string(Validation v) {
  return v == Validation::pending ? "pending" : v == Validation::accepted ? "accepted" : "rejected";
}

inline Role parse_role(const std::string& s) {
  if (s == "annotator") return Role::annotator;
  if (s == "expert") return Role::expert;
  if (s == "admin") return Role::admin;
  fail(ErrorCode::validation, "unknown role '" + s + "' (annotator, expert, admin)");
}
inline Kind parse_kind(const std::string& s) {
  if (s == "polygon") return Kind::polygon;
  if (s == "point") return Kind::point;
  fail(ErrorCode::validation, "unknown annotation kind '" + s + "'");
}
inline Source parse_source(const std::string& s) {
  if (s == "manual") return Source::manual;
  if (s == "model") return Source::model;
  fail(ErrorCode::validation, "unknown annotation source '" + s + "'");
}
inline Validation parse_validation(const std::string& s) {
  if (s == "pending") return Validation::pending;
  if (s == "accepted") return Validation::accepted;
  if (s == "rejected") return Validation::rejected;
  fail(ErrorCode::validation, "unknown validation status '" + s + "'");
}

struct Style {
  std::string line_color = "#00ff00";
  double line_thickness = 2;
  std::string fill_color = "#00ff00";
  double fill_opacity = 0.2;
  bool operator==(const Style&) const = default;
};

struct Annotation {
  std::int64_t id = 0;
  std::string batch_name;
  std::string user_name;
  std::string slide_name;
  Polygon geometry;  // working-resolution coordinates
  Kind kind = Kind::polygon;
  std::string label;
  Source source = Source::manual;
  Validation validation = Validation::accepted;
  Style style;
  std::int64_t created_at = 0;  // ms since epoch; 0 = assign on insert
  std::string created_by;

  bool operator==(const Annotation&) const = default;
};

struct User {
  std::string name;
  Role role = Role::annotator;
  std::string token;
};

struct Slide {
  std::string name;
  int width = 0;   // working resolution
  int height = 0;
  double scale_factor = 1;  // native pixels per working pixel
  double scan_magnification = 0;
  double target_magnification = 0;
  std::string tile_format = "png";
  int otsu_threshold = 0;
  double tissue_fraction = 0;
};

struct Batch {
  std::string name;
  std::vector<std::string> slide_names;  // defined order
  std::set<std::string> assigned_users;
  bool dense = false;
};

struct WsiLabel {
  std::string slide_name;
  std::string user_name;
  std::string class_label;
  int certainty = 100;  // percent
  std::string observations;
  bool operator==(const WsiLabel&) const = default;
};

struct TimingSession {
  std::int64_t id = 0;
  std::string user_name;
  std::string slide_name;
  std::string batch_name;
  double opened_at = 0;  // seconds
  double closed_at = 0;
};

inline std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

inline std::string random_token() {
  std::random_device rd;
  std::uniform_int_distribution<int> hex(0, 15);
  std::string token;
  for (int i = 0; i < 32; ++i) token.push_back("0123456789abcdef"[hex(rd)]);
  return token;
}

inline nlohmann::json geometry_to_json(const Polygon& g) {
  auto arr = nlohmann::json::array();
  for (const auto& p : g) arr.push_back({p.x, p.y});
  return arr;
}

inline Polygon geometry_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorCode::validation, "geometry must be an array of [x, y] pairs");
  Polygon g;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      fail(ErrorCode::validation, "geometry must be an array of [x, y] pairs");
    g.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return g;
}

inline nlohmann::json to_json(const Annotation& a) {
  return {{"id", a.id},
          {"batch", a.batch_name},
          {"user", a.user_name},
          {"slide", a.slide_name},
          {"geometry", geometry_to_json(a.geometry)},
          {"kind", to_string(a.kind)},
          {"label", a.label},
          {"source", to_string(a.source)},
          {"validation", to_string(a.validation)},
          {"style",
           {{"line_color", a.style.line_color},
            {"line_thickness", a.style.line_thickness},
            {"fill_color", a.style.fill_color},
            {"fill_opacity", a.style.fill_opacity}}},
          {"created_at", a.created_at},
          {"created_by", a.created_by}};
}

inline Style style_from_json(const nlohmann::json& j, Style base = {}) {
  try {
    if (j.contains("line_color")) base.line_color = j["line_color"].get<std::string>();
    if (j.contains("line_thickness")) base.line_thickness = j["line_thickness"].get<double>();
    if (j.contains("thickness")) base.line_thickness = j["thickness"].get<double>();
    if (j.contains("fill_color")) base.fill_color = j["fill_color"].get<std::string>();
    if (j.contains("fill_opacity")) base.fill_opacity = j["fill_opacity"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed style: ") + e.what());
  }
  return base;
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
  try {
    Annotation a;
    a.id = j.value("id", std::int64_t{0});
    a.batch_name = j.at("batch").get<std::string>();
    a.user_name = j.value("user", std::string());
    a.slide_name = j.at("slide").get<std::string>();
    a.geometry = geometry_from_json(j.at("geometry"));
    a.kind = parse_kind(j.value("kind", std::string("polygon")));
    a.label = j.value("label", std::string());
    a.source = parse_source(j.value("source", std::string("manual")));
    a.validation = parse_validation(
        j.value("validation", std::string(a.source == Source::manual ? "accepted" : "pending")));
    if (j.contains("style")) a.style = style_from_json(j["style"]);
    a.created_at = j.value("created_at", std::int64_t{0});
    a.created_by = j.value("created_by", std::string());
    return a;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed annotation: ") + e.what());
  }
}

inline void validate_style(const Style& s) {
  auto color_ok = [](const std::string& c) {
    return (c.size() == 7 || c.size() == 9) && c[0] == '#' &&
           std::all_of(c.begin() + 1, c.end(), [](char ch) { return std::isxdigit(static_cast<unsigned char>(ch)); });
  };
  if (!color_ok(s.line_color) || !color_ok(s.fill_color))
    fail(ErrorCode::validation, "colors must be #rrggbb or #rrggbbaa");
  if (!(s.line_thickness > 0 && s.line_thickness <= 100)) fail(ErrorCode::validation, "line_thickness must be in (0, 100]");
  if (!(s.fill_opacity >= 0 && s.fill_opacity <= 1)) fail(ErrorCode::validation, "fill_opacity must be in [0, 1]");
}

/// Embedded single-file store. Writes go through one connection under a
/// mutex, each in its own transaction; reads use pooled connections (WAL),
/// so readers never wait on each other.
class Store {
 public:
  explicit Store(const std::string& path, std::vector<std::string> classes = default_classes())
      : path_(path), classes_(std::move(classes)) {
    if (classes_.empty()) fail(ErrorCode::validation, "class set must not be empty");
    memory_ = path.empty() || path == ":memory:";
    writer_ = sql::open(memory_ ? ":memory:" : path);
    sql::exec(writer_.get(), "PRAGMA foreign_keys = ON");
    if (!memory_) sql::exec(writer_.get(), "PRAGMA journal_mode = WAL");
    sql::exec(writer_.get(), "PRAGMA synchronous = NORMAL");
    create_schema();
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::vector<std::string>& classes() const { return classes_; }
  const std::string& path() const { return path_; }

  // ---- users ------------------------------------------------------------------

  User add_user(const std::string& name, Role role = Role::annotator, std::string token = {}) {
    if (name.empty()) fail(ErrorCode::validation, "user name must not be empty");
    if (token.empty()) token = random_token();
    return write([&](sqlite3* db) {
      if (find_user(db, name)) fail(ErrorCode::conflict, "user '" + name + "' already exists");
      sql::Statement(db, "INSERT INTO users(name, role, token) VALUES(?,?,?)")
          .bind(1, name).bind(2, to_string(role)).bind(3, token).run();
      return User{name, role, token};
    });
  }

  std::optional<User> get_user(const std::string& name) const {
    return read([&](sqlite3* db) { return find_user(db, name); });
  }

  std::optional<User> user_by_token(const std::string& token) const {
    if (token.empty()) return std::nullopt;
    return read([&](sqlite3* db) -> std::optional<User> {
      sql::Statement st(db, "SELECT name, role, token FROM users WHERE token = ?");
      st.bind(1, token);
      if (!st.step()) return std::nullopt;
      return User{st.text(0), parse_role(st.text(1)), st.text(2)};
    });
  }

  std::vector<User> list_users() const {
    return read([&](sqlite3* db) {
      std::vector<User> out;
      sql::Statement st(db, "SELECT name, role, token FROM users ORDER BY name");
      while (st.step()) out.push_back({st.text(0), parse_role(st.text(1)), st.text(2)});
      return out;
    });
  }

  // ---- slides -------------------------------------------------------------------

  void add_slide(const Slide& s, bool replace = false) {
    if (s.name.empty()) fail(ErrorCode::validation, "slide name must not be empty");
    if (s.width < 1 || s.height < 1) fail(ErrorCode::validation, "slide dimensions must be positive");
    write([&](sqlite3* db) {
      const bool exists = find_slide(db, s.name).has_value();
      if (exists && !replace) fail(ErrorCode::conflict, "slide '" + s.name + "' already exists");
      sql::Statement st(db, exists ? "UPDATE slides SET width=?2, height=?3, scale_factor=?4, scan_magnification=?5, "
                                     "target_magnification=?6, tile_format=?7, otsu_threshold=?8, tissue_fraction=?9 "
                                     "WHERE name=?1"
                                   : "INSERT INTO slides(name, width, height, scale_factor, scan_magnification, "
                                     "target_magnification, tile_format, otsu_threshold, tissue_fraction) "
                                     "VALUES(?1,?2,?3,?4,?5,?6,?7,?8,?9)");
      st.bind(1, s.name).bind(2, s.width).bind(3, s.height).bind(4, s.scale_factor).bind(5, s.scan_magnification)
          .bind(6, s.target_magnification).bind(7, s.tile_format).bind(8, s.otsu_threshold)
          .bind(9, s.tissue_fraction).run();
      return 0;
    });
  }

  std::optional<Slide> get_slide(const std::string& name) const {
    return read([&](sqlite3* db) { return find_slide(db, name); });
  }

  std::vector<Slide> list_slides() const {
    return read([&](sqlite3* db) {
      std::vector<Slide> out;
      sql::Statement st(db, "SELECT name FROM slides ORDER BY name");
      while (st.step()) out.push_back(*find_slide(db, st.text(0)));
      return out;
    });
  }

  // ---- batches --------------------------------------------------------------------

  Batch create_batch(const std::string& name, const std::vector<std::string>& slides, bool dense = false) {
    if (name.empty()) fail(ErrorCode::validation, "batch name must not be empty");
    return write([&](sqlite3* db) {
      sql::Transaction tx(db);
      if (find_batch(db, name)) fail(ErrorCode::conflict, "batch '" + name + "' already exists");
      std::set<std::string> seen;
      for (const auto& s : slides) {
        if (!find_slide(db, s)) fail(ErrorCode::not_found, "unknown slide '" + s + "'");
        if (!seen.insert(s).second) fail(ErrorCode::validation, "slide '" + s + "' listed twice");
      }
      sql::Statement(db, "INSERT INTO batches(name, dense) VALUES(?,?)").bind(1, name).bind(2, dense).run();
      sql::Statement ins(db, "INSERT INTO batch_slides(batch_name, slide_name, position) VALUES(?,?,?)");
      for (std::size_t i = 0; i < slides.size(); ++i) {
        ins.bind(1, name).bind(2, slides[i]).bind(3, static_cast<std::int64_t>(i)).run();
        ins.reset();
      }
      tx.commit();
      return *find_batch(db, name);
    });
  }

  Batch assign_users(const std::string& batch, const std::vector<std::string>& users) {
    return write([&](sqlite3* db) {
      sql::Transaction tx(db);
      if (!find_batch(db, batch)) fail(ErrorCode::not_found, "unknown batch '" + batch + "'");
      for (const auto& u : users)
        if (!find_user(db, u)) fail(ErrorCode::not_found, "unknown user '" + u + "'");
      sql::Statement ins(db, "INSERT OR IGNORE INTO batch_users(batch_name, user_name) VALUES(?,?)");
      for (const auto& u : users) {
        ins.bind(1, batch).bind(2, u).run();
        ins.reset();
      }
      tx.commit();
      return *find_batch(db, batch);
    });
  }

  std::optional<Batch> get_batch(const std::string& name) const {
    return read([&](sqlite3* db) { return find_batch(db, name); });
  }

  std::vector<Batch> list_batches() const {
    return read([&](sqlite3* db) {
      std::vector<Batch> out;
      sql::Statement st(db, "SELECT name FROM batches ORDER BY name");
      while (st.step()) out.push_back(*find_batch(db, st.text(0)));
      return out;
    });
  }

  std::vector<std::string> batches_containing(const std::string& slide) const {
    return read([&](sqlite3* db) {
      std::vector<std::string> out;
      sql::Statement st(db, "SELECT batch_name FROM batch_slides WHERE slide_name = ? ORDER BY batch_name");
      st.bind(1, slide);
      while (st.step()) out.push_back(st.text(0));
      return out;
    });
  }

  bool is_assigned(const std::string& user, const std::string& batch) const {
    return read([&](sqlite3* db) { return assigned(db, user, batch); });
  }

  /// True when `user` is assigned to some batch that holds `slide`.
  bool can_access_slide(const std::string& user, const std::string& slide) const {
    return read([&](sqlite3* db) {
      sql::Statement st(db,
                        "SELECT 1 FROM batch_users bu JOIN batch_slides bs ON bu.batch_name = bs.batch_name "
                        "WHERE bu.user_name = ? AND bs.slide_name = ? LIMIT 1");
      st.bind(1, user).bind(2, slide);
      return st.step();
    });
  }

  // ---- annotations -------------------------------------------------------------------

  std::int64_t put_annotation(Annotation a) {
    if (a.source == Source::manual) a.validation = Validation::accepted;
    validate_style(a.style);
    if (a.created_at == 0) a.created_at = now_ms();
    return write([&](sqlite3* db) {
      check_annotation(db, a);
      sql::Transaction tx(db);
      const auto id = insert_annotation(db, a);
      tx.commit();
      return id;
    });
  }

  std::optional<Annotation> get_annotation(std::int64_t id) const {
    return read([&](sqlite3* db) { return find_annotation(db, id); });
  }

  /// The annotation as seen by `user`: must belong to their view.
  Annotation annotation_for(std::int64_t id, const std::string& user) const {
    auto a = get_annotation(id);
    if (!a) fail(ErrorCode::not_found, "annotation " + std::to_string(id) + " not found");
    if (a->user_name != user) fail(ErrorCode::forbidden, "annotation " + std::to_string(id) + " is not in your view");
    return *a;
  }

  void delete_annotation(std::int64_t id, const std::string& user) {
    write([&](sqlite3* db) {
      owned_annotation(db, id, user);
      sql::Statement(db, "DELETE FROM annotations WHERE id = ?").bind(1, id).run();
      return 0;
    });
  }

  Annotation set_validation(std::int64_t id, Validation status, const std::string& user) {
    if (status == Validation::pending) fail(ErrorCode::validation, "status must be accepted or rejected");
    return write([&](sqlite3* db) {
      auto a = owned_annotation(db, id, user);
      if (a.source != Source::model) fail(ErrorCode::validation, "annotation " + std::to_string(id) + " is not a model proposal");
      sql::Statement(db, "UPDATE annotations SET validation = ? WHERE id = ?").bind(1, to_string(status)).bind(2, id).run();
      a.validation = status;
      return a;
    });
  }

  Annotation set_style(std::int64_t id, const Style& style, const std::string& user) {
    validate_style(style);
    return write([&](sqlite3* db) {
      auto a = owned_annotation(db, id, user);
      sql::Statement(db,
                     "UPDATE annotations SET line_color=?, line_thickness=?, fill_color=?, fill_opacity=? WHERE id=?")
          .bind(1, style.line_color).bind(2, style.line_thickness).bind(3, style.fill_color)
          .bind(4, style.fill_opacity).bind(5, id).run();
      a.style = style;
      return a;
    });
  }

  Annotation set_label(std::int64_t id, const std::string& label, const std::string& user) {
    return write([&](sqlite3* db) {
      auto a = owned_annotation(db, id, user);
      sql::Statement(db, "UPDATE annotations SET label = ? WHERE id = ?").bind(1, label).bind(2, id).run();
      a.label = label;
      return a;
    });
  }

  /// The caller's view of a batch: their own records (manual drawings and
  /// their copy of model proposals). Empty `slide` means every slide.
  std::vector<Annotation> query_annotations(const std::string& batch, const std::string& slide,
                                            const std::string& user) const {
    return read([&](sqlite3* db) {
      if (!find_batch(db, batch)) fail(ErrorCode::not_found, "unknown batch '" + batch + "'");
      if (!assigned(db, user, batch)) fail(ErrorCode::forbidden, "user '" + user + "' is not assigned to batch '" + batch + "'");
      std::vector<Annotation> out;
      sql::Statement st(db, std::string(kSelectAnnotation) +
                                " WHERE batch_name = ?1 AND user_name = ?2 AND (?3 = '' OR slide_name = ?3)"
                                " ORDER BY created_at, id");
      st.bind(1, batch).bind(2, user).bind(3, slide);
      while (st.step()) out.push_back(row_to_annotation(st));
      return out;
    });
  }

  /// Every stored annotation, ordered by id. For reports and export.
  std::vector<Annotation> all_annotations() const {
    return read([&](sqlite3* db) {
      std::vector<Annotation> out;
      sql::Statement st(db, std::string(kSelectAnnotation) + " ORDER BY id");
      while (st.step()) out.push_back(row_to_annotation(st));
      return out;
    });
  }

  std::int64_t pending_count(const std::string& batch, const std::string& slide, const std::string& user) const {
    return read([&](sqlite3* db) {
      sql::Statement st(db,
                        "SELECT COUNT(*) FROM annotations WHERE batch_name=? AND slide_name=? AND user_name=? "
                        "AND source='model' AND validation='pending'");
      st.bind(1, batch).bind(2, slide).bind(3, user);
      st.step();
      return st.integer(0);
    });
  }

  /// Replaces the pending model proposals of (batch, slide) in one
  /// transaction: every assigned user gets their own copy of each polygon.
  /// Vertices are clipped to the slide bounds. Returns the new ids.
  std::vector<std::int64_t> replace_model_proposals(const std::string& batch, const std::string& slide,
                                                    const std::vector<Polygon>& polygons,
                                                    const std::string& created_by, const std::string& label = "tumor") {
    return write([&](sqlite3* db) {
      const auto s = find_slide(db, slide);
      if (!s) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      const auto b = find_batch(db, batch);
      if (!b) fail(ErrorCode::not_found, "unknown batch '" + batch + "'");
      if (std::find(b->slide_names.begin(), b->slide_names.end(), slide) == b->slide_names.end())
        fail(ErrorCode::validation, "slide '" + slide + "' is not in batch '" + batch + "'");
      sql::Transaction tx(db);
      sql::Statement(db,
                     "DELETE FROM annotations WHERE batch_name=? AND slide_name=? AND source='model' "
                     "AND validation='pending'")
          .bind(1, batch).bind(2, slide).run();
      std::vector<std::int64_t> ids;
      const auto stamp = now_ms();
      for (const auto& user : b->assigned_users) {
        for (const auto& poly : polygons) {
          Annotation a;
          a.batch_name = batch;
          a.user_name = user;
          a.slide_name = slide;
          a.geometry = clip_to_bounds(poly, s->width, s->height);
          a.kind = Kind::polygon;
          a.label = label;
          a.source = Source::model;
          a.validation = Validation::pending;
          a.created_at = stamp;
          a.created_by = created_by;
          check_geometry(a, *s);
          ids.push_back(insert_annotation(db, a));
        }
      }
      tx.commit();
      return ids;
    });
  }

  // ---- slide labels ------------------------------------------------------------------

  WsiLabel upsert_wsi_label(const WsiLabel& l) {
    if (std::find(classes_.begin(), classes_.end(), l.class_label) == classes_.end()) {
      std::string allowed;
      for (const auto& c : classes_) allowed += (allowed.empty() ? "" : ", ") + c;
      fail(ErrorCode::validation, "unknown class '" + l.class_label + "'; configured classes: " + allowed);
    }
    if (l.certainty < 0 || l.certainty > 100) fail(ErrorCode::validation, "certainty must be in 0..100");
    return write([&](sqlite3* db) {
      if (!find_slide(db, l.slide_name)) fail(ErrorCode::not_found, "unknown slide '" + l.slide_name + "'");
      if (!find_user(db, l.user_name)) fail(ErrorCode::not_found, "unknown user '" + l.user_name + "'");
      sql::Statement(db,
                     "INSERT INTO wsi_labels(slide_name, user_name, class_label, certainty, observations, updated_at) "
                     "VALUES(?1,?2,?3,?4,?5,?6) ON CONFLICT(slide_name, user_name) DO UPDATE SET "
                     "class_label=?3, certainty=?4, observations=?5, updated_at=?6")
          .bind(1, l.slide_name).bind(2, l.user_name).bind(3, l.class_label).bind(4, l.certainty)
          .bind(5, l.observations).bind(6, now_ms()).run();
      return l;
    });
  }

  std::optional<WsiLabel> get_wsi_label(const std::string& slide, const std::string& user) const {
    return read([&](sqlite3* db) -> std::optional<WsiLabel> {
      sql::Statement st(db, "SELECT slide_name, user_name, class_label, certainty, observations FROM wsi_labels "
                            "WHERE slide_name=? AND user_name=?");
      st.bind(1, slide).bind(2, user);
      if (!st.step()) return std::nullopt;
      return WsiLabel{st.text(0), st.text(1), st.text(2), static_cast<int>(st.integer(3)), st.text(4)};
    });
  }

  std::vector<WsiLabel> list_wsi_labels() const {
    return read([&](sqlite3* db) {
      std::vector<WsiLabel> out;
      sql::Statement st(db, "SELECT slide_name, user_name, class_label, certainty, observations FROM wsi_labels "
                            "ORDER BY slide_name, user_name");
      while (st.step()) out.push_back({st.text(0), st.text(1), st.text(2), static_cast<int>(st.integer(3)), st.text(4)});
      return out;
    });
  }

  // ---- timing -------------------------------------------------------------------------

  TimingSession record_session(const std::string& user, const std::string& slide, const std::string& batch,
                               double opened_at, double closed_at) {
    if (!std::isfinite(opened_at) || !std::isfinite(closed_at))
      fail(ErrorCode::validation, "session timestamps must be finite");
    if (closed_at < opened_at) fail(ErrorCode::validation, "session closes before it opens");
    return write([&](sqlite3* db) {
      if (!find_user(db, user)) fail(ErrorCode::not_found, "unknown user '" + user + "'");
      if (!find_slide(db, slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      sql::Statement(db, "INSERT INTO sessions(user_name, slide_name, batch_name, opened_at, closed_at) VALUES(?,?,?,?,?)")
          .bind(1, user).bind(2, slide).bind(3, batch).bind(4, opened_at).bind(5, closed_at).run();
      return TimingSession{sqlite3_last_insert_rowid(db), user, slide, batch, opened_at, closed_at};
    });
  }

  std::vector<TimingSession> list_sessions() const {
    return read([&](sqlite3* db) {
      std::vector<TimingSession> out;
      sql::Statement st(db, "SELECT id, user_name, slide_name, batch_name, opened_at, closed_at FROM sessions ORDER BY id");
      while (st.step()) out.push_back({st.integer(0), st.text(1), st.text(2), st.text(3), st.real(4), st.real(5)});
      return out;
    });
  }

  /// Total minutes per (user, slide), each interval capped at `cap_minutes`.
  std::map<std::pair<std::string, std::string>, double> minutes_per_user_slide(double cap_minutes = 30) const {
    std::map<std::pair<std::string, std::string>, double> out;
    for (const auto& s : list_sessions())
      out[{s.user_name, s.slide_name}] += std::min((s.closed_at - s.opened_at) / 60.0, cap_minutes);
    return out;
  }

  // ---- predictions -----------------------------------------------------------------------

  void replace_predictions(const std::string& slide, const std::vector<heatmap::PatchPrediction>& rows) {
    write([&](sqlite3* db) {
      if (!find_slide(db, slide)) fail(ErrorCode::not_found, "unknown slide '" + slide + "'");
      sql::Transaction tx(db);
      sql::Statement(db, "DELETE FROM predictions WHERE slide_name = ?").bind(1, slide).run();
      sql::Statement ins(db, "INSERT OR REPLACE INTO predictions(slide_name, x, y, prob) VALUES(?,?,?,?)");
      for (const auto& r : rows) {
        ins.bind(1, slide).bind(2, r.x).bind(3, r.y).bind(4, r.prob).run();
        ins.reset();
      }
      tx.commit();
      return 0;
    });
  }

  std::vector<heatmap::PatchPrediction> get_predictions(const std::string& slide) const {
    return read([&](sqlite3* db) {
      std::vector<heatmap::PatchPrediction> out;
      sql::Statement st(db, "SELECT x, y, prob FROM predictions WHERE slide_name = ? ORDER BY y, x");
      st.bind(1, slide);
      while (st.step()) out.push_back({slide, static_cast<int>(st.integer(0)), static_cast<int>(st.integer(1)), st.real(2)});
      return out;
    });
  }

  // ---- export / import ---------------------------------------------------------------------

  nlohmann::json export_annotations() const {
    auto arr = nlohmann::json::array();
    for (const auto& a : all_annotations()) arr.push_back(to_json(a));
    return {{"format", "gigaslide-annotations/1"}, {"annotations", arr}};
  }

  /// Inserts every annotation of an exported document (ids are reassigned).
  /// All-or-nothing.
  std::size_t import_annotations(const nlohmann::json& doc) {
    if (!doc.is_object() || doc.value("format", std::string()) != "gigaslide-annotations/1" ||
        !doc.contains("annotations"))
      fail(ErrorCode::validation, "not a gigaslide annotation export");
    std::vector<Annotation> items;
    for (const auto& j : doc["annotations"]) {
      auto a = annotation_from_json(j);
      if (a.source == Source::manual) a.validation = Validation::accepted;
      validate_style(a.style);
      if (a.created_at == 0) a.created_at = now_ms();
      items.push_back(std::move(a));
    }
    return write([&](sqlite3* db) {
      sql::Transaction tx(db);
      for (const auto& a : items) {
        check_annotation(db, a);
        insert_annotation(db, a);
      }
      tx.commit();
      return items.size();
    });
  }

 private:
  static constexpr const char* kSelectAnnotation =
      "SELECT id, batch_name, user_name, slide_name, geometry, kind, label, source, validation, line_color, "
      "line_thickness, fill_color, fill_opacity, created_at, created_by FROM annotations";

  template <class F>
  std::invoke_result_t<F&, sqlite3*> write(F&& f) {
    std::lock_guard lock(write_mutex_);
    return f(writer_.get());
  }

  template <class F>
  std::invoke_result_t<F&, sqlite3*> read(F&& f) const {
    if (memory_) {
      std::lock_guard lock(write_mutex_);
      return f(writer_.get());
    }
    sql::DbHandle conn = checkout();
    struct Return {
      const Store* self;
      sql::DbHandle& conn;
      ~Return() { self->checkin(std::move(conn)); }
    } guard{this, conn};
    return f(conn.get());
  }

  sql::DbHandle checkout() const {
    {
      std::lock_guard lock(pool_mutex_);
      if (!pool_.empty()) {
        auto conn = std::move(pool_.back());
        pool_.pop_back();
        return conn;
      }
    }
    auto conn = sql::open(path_);
    sql::exec(conn.get(), "PRAGMA query_only = ON");
    return conn;
  }

  void checkin(sql::DbHandle conn) const {
    std::lock_guard lock(pool_mutex_);
    if (pool_.size() < 16) pool_.push_back(std::move(conn));
  }

  void create_schema() {
    sql::exec(writer_.get(), R"SQL(
      CREATE TABLE IF NOT EXISTS users(
        name TEXT PRIMARY KEY, role TEXT NOT NULL, token TEXT NOT NULL UNIQUE);
      CREATE TABLE IF NOT EXISTS slides(
        name TEXT PRIMARY KEY, width INTEGER NOT NULL, height INTEGER NOT NULL,
        scale_factor REAL NOT NULL, scan_magnification REAL, target_magnification REAL,
        tile_format TEXT NOT NULL, otsu_threshold INTEGER, tissue_fraction REAL);
      CREATE TABLE IF NOT EXISTS batches(
        name TEXT PRIMARY KEY, dense INTEGER NOT NULL DEFAULT 0);
      CREATE TABLE IF NOT EXISTS batch_slides(
        batch_name TEXT NOT NULL REFERENCES batches(name),
        slide_name TEXT NOT NULL REFERENCES slides(name),
        position INTEGER NOT NULL, PRIMARY KEY(batch_name, slide_name));
      CREATE TABLE IF NOT EXISTS batch_users(
        batch_name TEXT NOT NULL REFERENCES batches(name),
        user_name TEXT NOT NULL REFERENCES users(name), PRIMARY KEY(batch_name, user_name));
      CREATE TABLE IF NOT EXISTS annotations(
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        batch_name TEXT NOT NULL, user_name TEXT NOT NULL, slide_name TEXT NOT NULL,
        geometry TEXT NOT NULL, kind TEXT NOT NULL, label TEXT NOT NULL,
        source TEXT NOT NULL, validation TEXT NOT NULL,
        line_color TEXT NOT NULL, line_thickness REAL NOT NULL,
        fill_color TEXT NOT NULL, fill_opacity REAL NOT NULL,
        created_at INTEGER NOT NULL, created_by TEXT NOT NULL DEFAULT '');
      CREATE INDEX IF NOT EXISTS annotations_view ON annotations(batch_name, user_name, slide_name);
      CREATE TABLE IF NOT EXISTS wsi_labels(
        slide_name TEXT NOT NULL REFERENCES slides(name), user_name TEXT NOT NULL REFERENCES users(name),
        class_label TEXT NOT NULL, certainty INTEGER NOT NULL, observations TEXT NOT NULL DEFAULT '',
        updated_at INTEGER NOT NULL, PRIMARY KEY(slide_name, user_name));
      CREATE TABLE IF NOT EXISTS sessions(
        id INTEGER PRIMARY KEY AUTOINCREMENT, user_name TEXT NOT NULL, slide_name TEXT NOT NULL,
        batch_name TEXT NOT NULL, opened_at REAL NOT NULL, closed_at REAL NOT NULL);
      CREATE TABLE IF NOT EXISTS predictions(
        slide_name TEXT NOT NULL, x INTEGER NOT NULL, y INTEGER NOT NULL, prob REAL NOT NULL,
        PRIMARY KEY(slide_name, x, y));
    )SQL");
  }

  static std::optional<User> find_user(sqlite3* db, const std::string& name) {
    sql::Statement st(db, "SELECT name, role, token FROM users WHERE name = ?");
    st.bind(1, name);
    if (!st.step()) return std::nullopt;
    return User{st.text(0), parse_role(st.text(1)), st.text(2)};
  }

  static std::optional<Slide> find_slide(sqlite3* db, const std::string& name) {
    sql::Statement st(db, "SELECT name, width, height, scale_factor, scan_magnification, target_magnification, "
                          "tile_format, otsu_threshold, tissue_fraction FROM slides WHERE name = ?");
    st.bind(1, name);
    if (!st.step()) return std::nullopt;
    return Slide{st.text(0), static_cast<int>(st.integer(1)), static_cast<int>(st.integer(2)), st.real(3), st.real(4),
                 st.real(5), st.text(6), static_cast<int>(st.integer(7)), st.real(8)};
  }

  static std::optional<Batch> find_batch(sqlite3* db, const std::string& name) {
    sql::Statement st(db, "SELECT dense FROM batches WHERE name = ?");
    st.bind(1, name);
    if (!st.step()) return std::nullopt;
    Batch b{name, {}, {}, st.integer(0) != 0};
    sql::Statement slides(db, "SELECT slide_name FROM batch_slides WHERE batch_name = ? ORDER BY position");
    slides.bind(1, name);
    while (slides.step()) b.slide_names.push_back(slides.text(0));
    sql::Statement users(db, "SELECT user_name FROM batch_users WHERE batch_name = ?");
    users.bind(1, name);
    while (users.step()) b.assigned_users.insert(users.text(0));
    return b;
  }

  static bool assigned(sqlite3* db, const std::string& user, const std::string& batch) {
    sql::Statement st(db, "SELECT 1 FROM batch_users WHERE batch_name = ? AND user_name = ?");
    st.bind(1, batch).bind(2, user);
    return st.step();
  }

  static Annotation row_to_annotation(const sql::Statement& st) {
    Annotation a;
    a.id = st.integer(0);
    a.batch_name = st.text(1);
    a.user_name = st.text(2);
    a.slide_name = st.text(3);
    a.geometry = geometry_from_json(nlohmann::json::parse(st.text(4)));
    a.kind = parse_kind(st.text(5));
    a.label = st.text(6);
    a.source = parse_source(st.text(7));
    a.validation = parse_validation(st.text(8));
    a.style = {st.text(9), st.real(10), st.text(11), st.real(12)};
    a.created_at = st.integer(13);
    a.created_by = st.text(14);
    return a;
  }

  static std::optional<Annotation> find_annotation(sqlite3* db, std::int64_t id) {
    sql::Statement st(db, std::string(kSelectAnnotation) + " WHERE id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    return row_to_annotation(st);
  }

  static Annotation owned_annotation(sqlite3* db, std::int64_t id, const std::string& user) {
    auto a = find_annotation(db, id);
    if (!a) fail(ErrorCode::not_found, "annotation " + std::to_string(id) + " not found");
    if (a->user_name != user) fail(ErrorCode::forbidden, "annotation " + std::to_string(id) + " is not in your view");
    return *a;
  }

  static void check_geometry(const Annotation& a, const Slide& s) {
    if (a.kind == Kind::polygon && a.geometry.size() < 3)
      fail(ErrorCode::validation, "polygon annotations need at least 3 vertices");
    if (a.kind == Kind::point && a.geometry.size() != 1)
      fail(ErrorCode::validation, "point annotations need exactly 1 vertex");
    for (const auto& p : a.geometry)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.y < 0 || p.x > s.width || p.y > s.height)
        fail(ErrorCode::validation, "vertex (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                        ") lies outside slide '" + s.name + "'");
  }

  static void check_annotation(sqlite3* db, const Annotation& a) {
    const auto b = find_batch(db, a.batch_name);
    if (!b) fail(ErrorCode::not_found, "unknown batch '" + a.batch_name + "'");
    if (!b->assigned_users.count(a.user_name))
      fail(ErrorCode::forbidden, "user '" + a.user_name + "' is not assigned to batch '" + a.batch_name + "'");
    const auto s = find_slide(db, a.slide_name);
    if (!s || std::find(b->slide_names.begin(), b->slide_names.end(), a.slide_name) == b->slide_names.end())
      fail(ErrorCode::validation, "slide '" + a.slide_name + "' is not in batch '" + a.batch_name + "'");
    check_geometry(a, *s);
  }

  static std::int64_t insert_annotation(sqlite3* db, const Annotation& a) {
    sql::Statement(db,
                   "INSERT INTO annotations(batch_name, user_name, slide_name, geometry, kind, label, source, "
                   "validation, line_color, line_thickness, fill_color, fill_opacity, created_at, created_by) "
                   "VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?)")
        .bind(1, a.batch_name).bind(2, a.user_name).bind(3, a.slide_name).bind(4, geometry_to_json(a.geometry).dump())
        .bind(5, to_string(a.kind)).bind(6, a.label).bind(7, to_string(a.source)).bind(8, to_string(a.validation))
        .bind(9, a.style.line_color).bind(10, a.style.line_thickness).bind(11, a.style.fill_color)
        .bind(12, a.style.fill_opacity).bind(13, a.created_at).bind(14, a.created_by).run();
    return sqlite3_last_insert_rowid(db);
  }

  std::string path_;
  std::vector<std::string> classes_;
  bool memory_ = false;
  mutable std::mutex write_mutex_;
  sql::DbHandle writer_;
  mutable std::mutex pool_mutex_;
  mutable std::vector<sql::DbHandle> pool_;
};

}  // namespace gigaslide::store
