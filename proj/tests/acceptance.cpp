// Acceptance gate: one PASS/FAIL line per headline criterion, nonzero exit
// if any fails. Runs without gtest so the output stays one line per check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "api_fixture.hpp"
#include "fixtures.hpp"
#include "gigaslide/geometry.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/metrics.hpp"
#include "gigaslide/pyramid.hpp"
#include "gigaslide/semisup.hpp"
#include "gigaslide/tissue.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gigaslide;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Records the first failure; later checks still run so the detail names it.
struct Checker {
  Verdict v;
  bool check(bool ok, const std::string& what) {
    if (!ok && v.pass) {
      v.pass = false;
      v.detail = what;
    }
    return ok;
  }
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << x;
  return o.str();
}

// ---- pyramid -------------------------------------------------------------------

Verdict pyramid_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  std::mt19937_64 rng(2025);
  std::uniform_int_distribution<int> side(1, 3000);
  testing_support::TempDir dir("accept-pyramid");
  std::size_t tiles = 0;
  for (int i = 0; i < 50 && c.v.pass; ++i) {
    const int w = side(rng), h = side(rng);
    const auto img = testing_support::random_raster(rng, w, h);
    const auto name = "p" + std::to_string(i);
    pyramid::build_pyramid(img, name, dir.path());
    const auto d = pyramid::load_descriptor(dir.path(), name);
    const int top = oracles::top_level(w, h);
    const auto tag = std::to_string(w) + "x" + std::to_string(h);
    if (!c.check(d.max_level == top && static_cast<int>(d.level_dims.size()) == top + 1, tag + ": level count")) break;
    gigaslide::Raster expect = img;
    for (int level = top; level >= 0; --level) {
      const int k = top - level;
      c.check(d.level_dims[level].width == oracles::ceil_div_pow2(w, k) &&
                  d.level_dims[level].height == oracles::ceil_div_pow2(h, k),
              tag + ": dims at level " + std::to_string(level));
      c.check(pyramid::reassemble_level(dir.path(), d, level) == expect,
              tag + ": reassembly differs at level " + std::to_string(level));
      tiles += static_cast<std::size_t>(d.columns(level)) * d.rows(level);
      if (level > 0) expect = oracles::halve(expect);
    }
    std::filesystem::remove_all(dir / (name + "_files"));
  }
  const double secs = testing_support::seconds_since(t0);
  c.check(secs < 60, "runtime " + fmt(secs) + " s exceeds 60 s");
  if (c.v.pass) c.v.detail = "50 sizes, " + std::to_string(tiles) + " tiles bit-exact, " + fmt(secs, 3) + " s";
  return c.v;
}

// ---- patch grid ------------------------------------------------------------------

Verdict patch_grid_criterion() {
  Checker c;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 5000), size(1, 1024);
  for (int i = 0; i < 200; ++i) {
    const int w = dim(rng), h = dim(rng), s = size(rng);
    const int stride = std::uniform_int_distribution<int>(1, s)(rng);
    const BinaryMask all(w, h, 1);
    const auto g = pyramid::extract_patch_grid(w, h, all, s, stride, 0.0);
    const int want = oracles::windows_brute(w, s, stride) * oracles::windows_brute(h, s, stride);
    c.check(static_cast<int>(g.positions.size()) == want,
            std::to_string(w) + "x" + std::to_string(h) + " size " + std::to_string(s) + " stride " +
                std::to_string(stride));
  }
  const auto ref = pyramid::extract_patch_grid(2048, 2048, BinaryMask(2048, 2048, 1), 512, 256, 0.2);
  c.check(ref.positions.size() == 49, "2048^2 at 512/256 gave " + std::to_string(ref.positions.size()));
  if (c.v.pass) c.v.detail = "200 triples match enumeration; 2048^2 -> 49 patches";
  return c.v;
}

// ---- otsu ------------------------------------------------------------------------

Verdict otsu_criterion() {
  Checker c;
  std::mt19937_64 rng(314);
  for (int i = 0; i < 100; ++i) {
    const auto h = oracles::random_histogram(rng);
    const auto got = pyramid::otsu_threshold(h);
    const int want = oracles::otsu_exhaustive(h);
    c.check(!got.degenerate && got.threshold == want,
            "histogram " + std::to_string(i) + ": " + std::to_string(got.threshold) + " vs " + std::to_string(want));
  }
  if (c.v.pass) c.v.detail = "100 histograms, exact";
  return c.v;
}

// ---- heatmap ---------------------------------------------------------------------

BinaryMask random_blobs(std::mt19937_64& rng, int w, int h) {
  BinaryMask m(w, h, 0);
  const int n = std::uniform_int_distribution<int>(1, 4)(rng);
  for (int k = 0; k < n; ++k) {
    // ellipses at random orientation
    std::uniform_real_distribution<double> cx(40, w - 40), cy(40, h - 40), r(15, 38), ang(0, M_PI);
    const double x0 = cx(rng), y0 = cy(rng), a = r(rng), b = r(rng), th = ang(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x + 0.5 - x0, dy = y + 0.5 - y0;
        const double u = dx * std::cos(th) + dy * std::sin(th), v = -dx * std::sin(th) + dy * std::cos(th);
        if ((u * u) / (a * a) + (v * v) / (b * b) <= 1) m.at(x, y) = 1;
      }
  }
  return m;
}

Verdict heatmap_criterion() {
  Checker c;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);

  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int w = 1024 + 256 * (trial % 4), h = 768 + 256 * (trial % 3);
    const auto g = pyramid::extract_patch_grid(w, h, BinaryMask(w, h, 1), 512, 256, 0.0);
    std::vector<heatmap::PatchPrediction> preds;
    for (auto i : g.kept) preds.push_back({"s", g.positions[i].x, g.positions[i].y, u(rng)});
    const auto map = heatmap::interpolate(preds, g, 0.125);
    for (const auto& p : preds) worst = std::max(worst, std::abs(map.sample(p.x + 256.0, p.y + 256.0) - p.prob));
  }
  c.check(worst <= 1e-9, "patch centre error " + fmt(worst));

  const auto g4 = pyramid::extract_patch_grid(3, 3, BinaryMask(3, 3, 1), 2, 1, 0.0);
  const auto mid = heatmap::interpolate({{"s", 0, 0, 0}, {"s", 1, 0, 1}, {"s", 0, 1, 0}, {"s", 1, 1, 1}}, g4, 1.0);
  const double m = mid.sample(1.5, 1.5);
  c.check(std::abs(m - 0.5) <= 1e-12, "midpoint gave " + fmt(m, 17));

  double min_iou = 1;
  for (int trial = 0; trial < 20; ++trial) {
    const auto blobs = random_blobs(rng, 256, 256);
    heatmap::HeatmapGrid hm;
    hm.map_scale = 1;
    hm.map_width = hm.working_width = 256;
    hm.map_height = hm.working_height = 256;
    hm.map.assign(blobs.bits.begin(), blobs.bits.end());
    const auto mask = heatmap::threshold_and_filter(hm, 0.5, 100);
    std::vector<Polygon> rings;
    for (const auto& p : heatmap::extract_polygons(mask)) {
      c.check(is_simple(p.vertices), "non-simple polygon in blob " + std::to_string(trial));
      rings.push_back(p.vertices);
    }
    const auto back = rasterize(rings, 256, 256);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < back.bits.size(); ++i) {
      inter += back.bits[i] && mask.bits[i];
      uni += back.bits[i] || mask.bits[i];
    }
    const double iou = uni ? static_cast<double>(inter) / uni : 1.0;
    min_iou = std::min(min_iou, iou);
  }
  c.check(min_iou >= 0.90, "min IoU " + fmt(min_iou));
  if (c.v.pass)
    c.v.detail = "centre error " + fmt(worst, 3) + ", midpoint " + fmt(m) + ", min IoU " + fmt(min_iou) + " over 20 blobs";
  return c.v;
}

// ---- semisup ---------------------------------------------------------------------

Verdict semisup_criterion() {
  using namespace semisup;
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> uw(0, 1);

  double worst_fd = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = std::uniform_int_distribution<int>(1, 8)(rng);
    const int classes = std::uniform_int_distribution<int>(2, 6)(rng);
    ClassifierHead head(dim, classes);
    for (auto& v : head.weights) v = g(rng);
    for (auto& v : head.bias) v = g(rng);
    std::vector<FeatureVector> xs;
    std::vector<int> ys;
    std::vector<double> ws;
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    for (int i = 0; i < n; ++i) {
      FeatureVector x(dim);
      for (auto& v : x) v = 2 * g(rng);
      xs.push_back(x);
      ys.push_back(std::uniform_int_distribution<int>(0, classes - 1)(rng));
      ws.push_back(uw(rng));
    }
    const auto grad = loss_and_gradient(head, xs, ys, ws);
    std::vector<double> flat(grad.grad.weights);
    flat.insert(flat.end(), grad.grad.bias.begin(), grad.grad.bias.end());
    const auto fd = oracles::numeric_gradient(head.weights, head.bias, head.classes, xs, ys, ws);
    worst_fd = std::max(worst_fd, oracles::relative_error(flat, fd));
  }
  c.check(worst_fd <= 1e-5, "gradient relative error " + fmt(worst_fd));

  std::normal_distribution<double> logits(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + trial % 9;
    ClassifierHead head(1, k);
    for (auto& b : head.bias) b = logits(rng);
    const auto s = pseudo_label_one(head, {0.0});
    if (!c.check(s.weight >= 1.0 / k - 1e-15 && s.weight <= 1.0, "weight " + fmt(s.weight, 17) + " outside [1/C, 1]"))
      break;
  }

  std::vector<double> teacher, student;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = fixtures::run_teacher_student(seed);
    teacher.push_back(r.teacher);
    student.push_back(r.student);
  }
  std::sort(teacher.begin(), teacher.end());
  std::sort(student.begin(), student.end());
  const double mt = (teacher[4] + teacher[5]) / 2, ms = (student[4] + student[5]) / 2;
  c.check(ms >= mt, "median student " + fmt(ms) + " < teacher " + fmt(mt));

  const auto data = fixtures::two_clusters(3);
  Hyperparameters h;
  h.seed = 3;
  const auto t = train_teacher(data.labeled, h);
  c.check(train_student(data.labeled, {}, h).head == t.head, "student with no pseudo samples differs from teacher");

  const double secs = testing_support::seconds_since(t0);
  c.check(secs < 30, "runtime " + fmt(secs) + " s exceeds 30 s");
  if (c.v.pass)
    c.v.detail = "FD error " + fmt(worst_fd, 3) + ", median teacher " + fmt(mt, 6) + " / student " + fmt(ms, 6) + ", " +
                 fmt(secs, 3) + " s";
  return c.v;
}

// ---- metrics ---------------------------------------------------------------------

Verdict metrics_criterion() {
  using namespace metrics;
  Checker c;
  c.check(recall_t({10, 2, 12}) == 0.8, "Recall_T(10, 2) != 0.8");
  c.check(std::abs(recall_nt({10, 2, 12}) - 8.0 / 12) < 1e-15, "Recall_NT(10, 2, 12) != 8/12");

  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 100;
    const int classes = 2 + trial % 3;
    std::uniform_int_distribution<int> label(0, classes - 1), coarse(0, 20);
    std::vector<int> pred(n), truth(n), binary(n);
    std::vector<double> score(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = label(rng);
      truth[i] = label(rng);
      binary[i] = i < 2 ? i : static_cast<int>(rng() % 2);
      score[i] = coarse(rng) + 2.0 * binary[i];  // integers: ties are real, distinct scores stay apart
    }
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += pred[i] == truth[i];
    c.check(accuracy(pred, truth) == static_cast<double>(hits) / n, "accuracy");
    c.check(std::abs(macro_f1(pred, truth) - oracles::macro_f1_pr(pred, truth)) < 1e-12, "macro F1");
    const double want_f1 = classes == 2 ? oracles::f1_pr(1, pred, truth) : oracles::macro_f1_pr(pred, truth);
    c.check(std::abs(f1_score(pred, truth) - want_f1) < 1e-12, "F1");
    const double a = auc(binary, score);
    c.check(std::abs(a - oracles::auc_pairs(binary, score)) < 1e-12, "AUC vs pair count");
    std::vector<double> warped(score);
    for (auto& v : warped) v = std::atan(v / 8) * 3 + 11;
    c.check(std::abs(auc(binary, warped) - a) < 1e-12, "AUC changed under a monotone transform");

    // region tally against a direct count of random decisions
    long long tm = 0, nt = 0, tp = 0;
    std::vector<store::Annotation> rows;
    for (int i = 0; i < n; ++i) {
      store::Annotation r;
      const int kind = static_cast<int>(rng() % 5);
      r.label = kind == 4 ? "tumor" : "x";
      r.source = kind < 3 ? store::Source::model : store::Source::manual;
      r.validation = kind == 0 ? store::Validation::accepted
                     : kind == 1 ? store::Validation::rejected
                     : kind == 2 ? store::Validation::pending
                                 : store::Validation::accepted;
      if (kind == 0) ++tm, ++tp;
      if (kind == 1) ++tm, ++nt;
      if (kind == 4) ++tp;
      rows.push_back(r);
    }
    c.check(tally_annotations(rows).tally == RegionTally{tm, nt, tp}, "region tally");

    const std::vector<std::string> names{"lm", "lms", "df", "dfs", "mfc", "fxa", "cef"};
    std::vector<std::string> e, an;
    for (int i = 0; i < n; ++i) e.push_back(names[rng() % 7]), an.push_back(names[rng() % 7]);
    const auto cm = confusion(e, an, names);
    for (std::size_t r = 0; r < 7; ++r) {
      double sum = 0;
      long long total = 0;
      for (std::size_t k = 0; k < 7; ++k) {
        long long brute = 0;
        for (int i = 0; i < n; ++i) brute += e[i] == names[r] && an[i] == names[k];
        c.check(cm.counts[r][k] == brute, "confusion count");
        sum += cm.normalized[r][k];
        total += brute;
      }
      if (total) c.check(std::abs(sum - 1) <= 1e-9, "confusion row sum " + fmt(sum, 17));
    }
  }
  if (c.v.pass) c.v.detail = "worked values exact; 50 fixtures of 100 items match oracles";
  return c.v;
}

// ---- end to end ------------------------------------------------------------------

Verdict end_to_end_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  testing_support::LiveServer live("accept-e2e");
  const double cx = 1100, cy = 950, radius = 560;
  live.ingest(testing_support::stained_blob(2048, 2048, cx, cy, radius), "wsi");
  live.db().create_batch("study", {"wsi"}, true);
  live.db().assign_users("study", {"ann", "bob", "exp"});

  auto expert = live.client("exp");
  const auto csv = testing_support::constant_predictions(live.db(), live.config(), "wsi", 0.9);
  auto queued = expert.Post("/api/predictions/wsi", csv, "text/csv");
  if (!c.check(queued && queued->status == 202, "upload not accepted")) return c.v;
  const auto job = testing_support::wait_for_job(expert, "wsi", json::parse(queued->body)["job_id"].get<std::int64_t>());
  if (!c.check(job.is_object() && job["state"] == "done", "job did not finish: " + job.dump())) return c.v;

  BinaryMask blob(2048, 2048, 0);
  std::size_t blob_px = 0;
  for (int y = 0; y < 2048; ++y)
    for (int x = 0; x < 2048; ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= radius) blob.at(x, y) = 1, ++blob_px;

  double worst_cover = 1;
  std::map<std::string, json> views;
  for (const std::string user : {"ann", "bob", "exp"}) {
    auto r = live.client(user).Get("/api/annotations?batch=study&slide=wsi");
    views[user] = json::parse(r->body);
    double best = 0;
    int pending = 0;
    for (const auto& a : views[user]) {
      if (a["source"] != "model" || a["validation"] != "pending") continue;
      ++pending;
      Polygon ring;
      for (const auto& p : a["geometry"]) ring.push_back({p[0].get<double>(), p[1].get<double>()});
      const auto m = rasterize({ring}, 2048, 2048);
      std::size_t covered = 0;
      for (std::size_t i = 0; i < m.bits.size(); ++i) covered += m.bits[i] && blob.bits[i];
      best = std::max(best, static_cast<double>(covered) / blob_px);
    }
    c.check(pending >= 1, user + " has no pending proposal");
    worst_cover = std::min(worst_cover, best);
  }
  c.check(worst_cover >= 0.80, "best proposal covers " + fmt(worst_cover) + " of the blob");

  // ann accepts everything and draws one tumor region; bob rejects everything
  std::map<std::string, metrics::RegionTally> expected;
  auto decide = [&](const std::string& user, const char* status) {
    for (const auto& a : views[user]) {
      const auto path = "/api/annotations/" + std::to_string(a["id"].get<std::int64_t>()) + "/validation";
      auto r = live.client(user).Put(path, json{{"status", status}}.dump(), "application/json");
      c.check(r && r->status == 200, "validation failed for " + user);
      ++expected[user].tm;
      if (std::string(status) == "rejected") ++expected[user].nt;
      else ++expected[user].tp;
    }
  };
  decide("ann", "accepted");
  decide("bob", "rejected");
  const json drawn = {{"batch", "study"}, {"slide", "wsi"}, {"label", "tumor"},
                      {"geometry", {{100, 100}, {300, 100}, {300, 300}, {100, 300}}}};
  auto posted = live.client("ann").Post("/api/annotations", drawn.dump(), "application/json");
  c.check(posted && posted->status == 201, "manual annotation rejected");
  ++expected["ann"].tp;

  auto rep = expert.Get("/api/reports/agreement?batch=study");
  if (!c.check(rep && rep->status == 200, "agreement report failed")) return c.v;
  const auto doc = json::parse(rep->body);
  for (const auto& row : doc["annotators"]) {
    const auto user = row["annotator"].get<std::string>();
    const metrics::RegionTally got{row["TM"].get<long long>(), row["NT"].get<long long>(), row["TP"].get<long long>()};
    c.check(got == expected[user], user + " tally " + row.dump());
    c.check(row["pending"] == 0, user + " still has pending proposals");
  }
  c.check(doc["annotators"].size() == 2, "report should list the two annotators");
  const auto& ann_row = doc["annotators"][0];
  c.check(ann_row["recall_t"] == 1.0, "ann Recall_T " + ann_row["recall_t"].dump());

  const double secs = testing_support::seconds_since(t0);
  c.check(secs < 120, "runtime " + fmt(secs) + " s exceeds 120 s");
  if (c.v.pass)
    c.v.detail = std::to_string(job["polygons"].get<int>()) + " region(s), min blob coverage " + fmt(worst_cover) +
                 ", tallies match, " + fmt(secs, 3) + " s";
  return c.v;
}

// ---- isolation -------------------------------------------------------------------

Verdict isolation_criterion() {
  Checker c;
  testing_support::LiveServer live("accept-iso");
  std::mt19937_64 rng(8080);
  live.ingest(testing_support::stained_blob(600, 600, 300, 300, 150), "s0");
  live.ingest(testing_support::stained_blob(600, 600, 200, 250, 120), "s1");
  std::vector<std::string> users{"ann", "bob", "exp"};
  for (int i = 0; i < 5; ++i) {
    users.push_back("u" + std::to_string(i));
    live.db().add_user(users.back(), store::Role::annotator, "tok-" + users.back());
  }
  // random batches with random members
  std::vector<std::string> batches;
  std::map<std::string, std::set<std::string>> members;
  std::map<std::string, std::vector<std::string>> slides_of;
  for (int b = 0; b < 4; ++b) {
    const auto name = "batch" + std::to_string(b);
    std::vector<std::string> slides;
    if (rng() % 2 || b == 0) slides.push_back("s0");
    if (rng() % 2 || slides.empty()) slides.push_back("s1");
    live.db().create_batch(name, slides, rng() % 2);
    std::vector<std::string> who;
    for (const auto& u : users)
      if (rng() % 2) who.push_back(u);
    if (who.empty()) who.push_back(users[rng() % users.size()]);
    live.db().assign_users(name, who);
    batches.push_back(name);
    members[name] = {who.begin(), who.end()};
    slides_of[name] = slides;
  }

  std::map<std::pair<std::string, std::string>, std::set<std::int64_t>> owned;
  int denied = 0, writes = 0;
  for (int step = 0; step < 300; ++step) {
    const auto& user = users[rng() % users.size()];
    const auto& batch = batches[rng() % batches.size()];
    const auto& slide = slides_of[batch][rng() % slides_of[batch].size()];
    auto client = live.client(user);
    const bool member = members[batch].count(user) > 0;
    auto& mine = owned[{user, batch}];
    if (member && !mine.empty() && rng() % 4 == 0) {
      const auto id = *std::next(mine.begin(), static_cast<long>(rng() % mine.size()));
      auto r = client.Delete("/api/annotations/" + std::to_string(id));
      c.check(r && r->status == 200, "delete of own annotation failed");
      mine.erase(id);
      continue;
    }
    const double off = static_cast<double>(rng() % 400);
    const json a = {{"batch", batch}, {"slide", slide}, {"label", "tumor"},
                    {"geometry", {{off, off}, {off + 50, off}, {off, off + 50}}}};
    auto r = client.Post("/api/annotations", a.dump(), "application/json");
    if (!r) {
      c.check(false, "no response");
      break;
    }
    if (member) {
      c.check(r->status == 201, "member write refused: " + r->body);
      if (r->status == 201) mine.insert(json::parse(r->body)["id"].get<std::int64_t>()), ++writes;
    } else {
      c.check(r->status == 403, "non-member write got " + std::to_string(r->status));
      ++denied;
    }
    // someone else's record must stay out of reach
    for (const auto& [key, ids] : owned) {
      if (key.first == user || ids.empty()) continue;
      auto peek = client.Get("/api/annotations/" + std::to_string(*ids.begin()));
      c.check(peek && peek->status != 200, user + " read " + key.first + "'s annotation");
      break;
    }
  }
  for (const auto& user : users)
    for (const auto& batch : batches) {
      auto r = live.client(user).Get("/api/annotations?batch=" + batch);
      if (!members[batch].count(user)) {
        c.check(r && r->status == 403, user + " listed " + batch + " without membership");
        continue;
      }
      std::set<std::int64_t> seen;
      for (const auto& a : json::parse(r->body)) {
        c.check(a["user"] == user, user + " saw " + a["user"].get<std::string>() + "'s annotation");
        seen.insert(a["id"].get<std::int64_t>());
      }
      c.check(seen == owned[{user, batch}], user + "/" + batch + " listing differs from own records");
    }
  if (c.v.pass)
    c.v.detail = std::to_string(writes) + " writes, " + std::to_string(denied) + " refused, " +
                 std::to_string(users.size()) + " users x " + std::to_string(batches.size()) + " batches, no leaks";
  return c.v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"pyramid", pyramid_criterion},         {"patch-grid", patch_grid_criterion},
      {"otsu", otsu_criterion},               {"heatmap", heatmap_criterion},
      {"semisup", semisup_criterion},         {"metrics", metrics_criterion},
      {"end-to-end", end_to_end_criterion},   {"isolation", isolation_criterion},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    failures += !v.pass;
  }
  return failures ? 1 : 0;
}
