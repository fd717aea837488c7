#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gigaslide/metrics.hpp"
#include "gigaslide/store.hpp"

namespace gigaslide::metrics {

struct ReportFilter {
  std::string batch;                    // restrict to one batch's slides
  bool dense_only = false;              // restrict to slides of dense batches
  std::string expert;                   // ground-truth user; default: experts by name order
  std::vector<std::string> annotators;  // default: every annotator-role user
  std::string group_by = "annotator";   // timing: class | annotator | slide
  std::string batch_a, batch_b;         // batch comparison
  double cap_minutes = 30;
};

inline const std::vector<std::string>& report_kinds() {
  static const std::vector<std::string> kinds{"agreement", "confusion", "timing", "batch_comparison", "overlap"};
  return kinds;
}

/// slide -> expert class. With no explicit expert, the first expert (by
/// name) that labeled a slide provides its class.
inline std::map<std::string, std::string> expert_labels(const store::Store& s, const std::string& expert = {}) {
  std::set<std::string> experts;
  if (!expert.empty()) {
    if (!s.get_user(expert)) fail(ErrorCode::not_found, "unknown expert '" + expert + "'");
    experts.insert(expert);
  } else {
    for (const auto& u : s.list_users())
      if (u.role == store::Role::expert) experts.insert(u.name);
  }
  std::map<std::string, std::string> out;
  for (const auto& e : experts)
    for (const auto& l : s.list_wsi_labels())
      if (l.user_name == e && !out.count(l.slide_name)) out[l.slide_name] = l.class_label;
  return out;
}

inline std::vector<std::string> default_annotators(const store::Store& s, const ReportFilter& f) {
  if (!f.annotators.empty()) return f.annotators;
  std::vector<std::string> out;
  for (const auto& u : s.list_users())
    if (u.role == store::Role::annotator) out.push_back(u.name);
  return out;
}

inline std::set<std::string> slides_in_scope(const store::Store& s, const ReportFilter& f) {
  std::set<std::string> out;
  if (!f.batch.empty()) {
    const auto b = s.get_batch(f.batch);
    if (!b) fail(ErrorCode::not_found, "unknown batch '" + f.batch + "'");
    if (f.dense_only && !b->dense) return out;
    out.insert(b->slide_names.begin(), b->slide_names.end());
    return out;
  }
  if (f.dense_only) {
    for (const auto& b : s.list_batches())
      if (b.dense) out.insert(b.slide_names.begin(), b.slide_names.end());
    return out;
  }
  for (const auto& sl : s.list_slides()) out.insert(sl.name);
  return out;
}

struct TallyWithPending {
  RegionTally tally;
  long long pending = 0;
};

/// Per stored record: decided model proposals form TM, rejected ones NT;
/// accepted proposals plus the annotator's own "tumor" drawings form TP.
inline TallyWithPending tally_annotations(const std::vector<store::Annotation>& rows) {
  TallyWithPending t;
  for (const auto& a : rows) {
    if (a.source == store::Source::model) {
      if (a.validation == store::Validation::pending) {
        ++t.pending;
        continue;
      }
      ++t.tally.tm;
      if (a.validation == store::Validation::rejected) ++t.tally.nt;
      else ++t.tally.tp;
    } else if (a.label == "tumor") {
      ++t.tally.tp;
    }
  }
  return t;
}

namespace detail {

inline nlohmann::json optional_ratio(const RegionTally& t, double (*fn)(const RegionTally&)) {
  try {
    return fn(t);
  } catch (const Error&) {
    return nullptr;
  }
}

inline nlohmann::json mean_std_json(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  const auto ms = mean_std(v);
  return {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
}

}  // namespace detail

inline nlohmann::json agreement_report(const store::Store& s, const ReportFilter& f = {}) {
  const auto scope = slides_in_scope(s, f);
  const auto truth = expert_labels(s, f.expert);
  const auto annotators = default_annotators(s, f);
  const auto rows = s.all_annotations();

  nlohmann::json per_annotator = nlohmann::json::array();
  std::map<std::string, std::vector<double>> class_rt, class_rnt;
  for (const auto& user : annotators) {
    std::vector<store::Annotation> mine;
    std::map<std::string, std::vector<store::Annotation>> by_class;
    for (const auto& a : rows) {
      if (a.user_name != user || !scope.count(a.slide_name)) continue;
      if (!f.batch.empty() && a.batch_name != f.batch) continue;
      mine.push_back(a);
      if (const auto it = truth.find(a.slide_name); it != truth.end()) by_class[it->second].push_back(a);
    }
    const auto total = tally_annotations(mine);
    nlohmann::json entry = {{"annotator", user},
                            {"TM", total.tally.tm},
                            {"NT", total.tally.nt},
                            {"TP", total.tally.tp},
                            {"pending", total.pending},
                            {"recall_t", detail::optional_ratio(total.tally, recall_t)},
                            {"recall_nt", detail::optional_ratio(total.tally, recall_nt)}};
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [cls, list] : by_class) {
      const auto t = tally_annotations(list).tally;
      classes[cls] = {{"TM", t.tm}, {"NT", t.nt}, {"TP", t.tp},
                      {"recall_t", detail::optional_ratio(t, recall_t)},
                      {"recall_nt", detail::optional_ratio(t, recall_nt)}};
      if (t.tm > 0) class_rt[cls].push_back(recall_t(t));
      if (t.tp > 0) class_rnt[cls].push_back(recall_nt(t));
    }
    entry["by_class"] = classes;
    per_annotator.push_back(entry);
  }

  nlohmann::json per_class = nlohmann::json::array();
  std::vector<double> means_rt, means_rnt;
  for (const auto& cls : s.classes()) {
    const auto rt = class_rt[cls];
    const auto rnt = class_rnt[cls];
    per_class.push_back({{"class", cls}, {"recall_t", detail::mean_std_json(rt)}, {"recall_nt", detail::mean_std_json(rnt)}});
    if (!rt.empty()) means_rt.push_back(mean_std(rt).mean);
    if (!rnt.empty()) means_rnt.push_back(mean_std(rnt).mean);
  }
  return {{"kind", "agreement"},
          {"annotators", per_annotator},
          {"classes", per_class},
          {"average", {{"recall_t", detail::mean_std_json(means_rt)}, {"recall_nt", detail::mean_std_json(means_rnt)}}}};
}

inline nlohmann::json confusion_report(const store::Store& s, const ReportFilter& f = {}) {
  const auto scope = slides_in_scope(s, f);
  const auto truth = expert_labels(s, f.expert);
  nlohmann::json out = {{"kind", "confusion"}, {"classes", s.classes()}, {"annotators", nlohmann::json::array()}};
  for (const auto& user : default_annotators(s, f)) {
    std::vector<std::string> expert, given;
    for (const auto& l : s.list_wsi_labels()) {
      if (l.user_name != user || !scope.count(l.slide_name)) continue;
      const auto it = truth.find(l.slide_name);
      if (it == truth.end()) continue;
      expert.push_back(it->second);
      given.push_back(l.class_label);
    }
    const auto m = confusion(expert, given, s.classes());
    out["annotators"].push_back({{"annotator", user}, {"slides", expert.size()}, {"counts", m.counts}, {"normalized", m.normalized}});
  }
  return out;
}

inline nlohmann::json overlap_report_doc(const store::Store& s, const ReportFilter& f = {}) {
  const auto scope = slides_in_scope(s, f);
  std::map<std::string, std::string> truth;
  for (const auto& [slide, cls] : expert_labels(s, f.expert))
    if (scope.count(slide)) truth[slide] = cls;
  const auto annotators = default_annotators(s, f);
  std::vector<std::map<std::string, std::string>> per_annotator(annotators.size());
  const auto labels = s.list_wsi_labels();
  for (std::size_t i = 0; i < annotators.size(); ++i)
    for (const auto& l : labels)
      if (l.user_name == annotators[i] && scope.count(l.slide_name)) per_annotator[i][l.slide_name] = l.class_label;
  const auto r = overlap_report(truth, per_annotator, s.classes());
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"class", row.cls}, {"expert_count", row.expert_count},
                    {"annotator_count", row.annotator_count}, {"intersection", row.intersection}});
  return {{"kind", "overlap"}, {"annotators", annotators}, {"rows", rows}, {"excluded_slides", r.excluded_slides}};
}

/// Mean minutes per WSI. A WSI visit is one (annotator, slide) pair whose
/// capped intervals are summed; groups average over their visits.
inline nlohmann::json timing_report(const store::Store& s, const ReportFilter& f = {}) {
  if (f.group_by != "class" && f.group_by != "annotator" && f.group_by != "slide")
    fail(ErrorCode::bad_request, "group_by must be class, annotator or slide");
  const auto scope = slides_in_scope(s, f);
  const auto truth = f.group_by == "class" ? expert_labels(s, f.expert) : std::map<std::string, std::string>{};
  std::map<std::string, std::vector<double>> groups;
  for (const auto& [key, minutes] : s.minutes_per_user_slide(f.cap_minutes)) {
    const auto& [user, slide] = key;
    if (!scope.count(slide)) continue;
    if (!f.annotators.empty() && std::find(f.annotators.begin(), f.annotators.end(), user) == f.annotators.end())
      continue;
    std::string group;
    if (f.group_by == "annotator") group = user;
    else if (f.group_by == "slide") group = slide;
    else if (const auto it = truth.find(slide); it != truth.end()) group = it->second;
    else continue;
    groups[group].push_back(minutes);
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [group, values] : groups)
    rows.push_back({{"group", group}, {"mean_minutes", mean_std(values).mean}, {"wsi_count", values.size()}});
  return {{"kind", "timing"}, {"group_by", f.group_by}, {"cap_minutes", f.cap_minutes}, {"rows", rows}};
}

struct BatchScore {
  double acc = 0;
  double f1 = 0;
  std::size_t slides = 0;
};

/// ACC and macro-F1 of one annotator's WSI labels on a batch, against the
/// expert. Absent when the annotator labeled none of the batch's slides.
inline std::optional<BatchScore> batch_score(const store::Store& s, const std::string& batch, const std::string& user,
                                             const std::map<std::string, std::string>& truth) {
  const auto b = s.get_batch(batch);
  if (!b) return std::nullopt;
  std::vector<int> pred, gold;
  const auto& classes = s.classes();
  for (const auto& slide : b->slide_names) {
    const auto label = s.get_wsi_label(slide, user);
    const auto it = truth.find(slide);
    if (!label || it == truth.end()) continue;
    pred.push_back(static_cast<int>(class_index(classes, label->class_label)));
    gold.push_back(static_cast<int>(class_index(classes, it->second)));
  }
  if (pred.empty()) return std::nullopt;
  return BatchScore{accuracy(pred, gold), macro_f1(pred, gold), pred.size()};
}

inline nlohmann::json batch_comparison(const store::Store& s, const ReportFilter& f) {
  if (f.batch_a.empty() || f.batch_b.empty()) fail(ErrorCode::bad_request, "batch comparison needs batch_a and batch_b");
  for (const auto* name : {&f.batch_a, &f.batch_b})
    if (!s.get_batch(*name)) fail(ErrorCode::not_found, "unknown batch '" + *name + "'");
  const auto truth = expert_labels(s, f.expert);
  nlohmann::json rows = nlohmann::json::array();
  auto score_json = [](const std::optional<BatchScore>& sc) -> nlohmann::json {
    if (!sc) return nullptr;
    return {{"acc", sc->acc}, {"f1", sc->f1}, {"slides", sc->slides}};
  };
  for (const auto& user : default_annotators(s, f))
    rows.push_back({{"annotator", user},
                    {"batch_a", score_json(batch_score(s, f.batch_a, user, truth))},
                    {"batch_b", score_json(batch_score(s, f.batch_b, user, truth))}});
  return {{"kind", "batch_comparison"}, {"batch_a", f.batch_a}, {"batch_b", f.batch_b}, {"rows", rows}};
}

inline nlohmann::json build_report(const store::Store& s, const std::string& kind, const ReportFilter& f) {
  if (kind == "agreement") return agreement_report(s, f);
  if (kind == "confusion") return confusion_report(s, f);
  if (kind == "timing") return timing_report(s, f);
  if (kind == "batch_comparison") return batch_comparison(s, f);
  if (kind == "overlap") return overlap_report_doc(s, f);
  fail(ErrorCode::bad_request, "unknown report kind '" + kind + "'");
}

// ---- tables -------------------------------------------------------------------

namespace detail {

inline std::string cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << v.get<double>();
    return out.str();
  }
  return v.dump();
}

inline std::string mean_pm_std(const nlohmann::json& v) {
  if (v.is_null()) return "";
  return cell(v["mean"]) + " ± " + cell(v["std"]);
}

}  // namespace detail

/// Comma-separated table: one row per class, annotator or group, depending on the kind.
inline std::string report_table(const nlohmann::json& doc) {
  using detail::cell;
  std::ostringstream out;
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "agreement") {
    out << "class,Recall_T,Recall_NT\n";
    for (const auto& r : doc["classes"])
      out << cell(r["class"]) << ',' << detail::mean_pm_std(r["recall_t"]) << ',' << detail::mean_pm_std(r["recall_nt"]) << '\n';
    out << "Average," << detail::mean_pm_std(doc["average"]["recall_t"]) << ','
        << detail::mean_pm_std(doc["average"]["recall_nt"]) << '\n';
  } else if (kind == "confusion") {
    for (const auto& a : doc["annotators"]) {
      out << "annotator," << cell(a["annotator"]) << '\n' << "expert\\annotator";
      for (const auto& c : doc["classes"]) out << ',' << cell(c);
      out << '\n';
      for (std::size_t r = 0; r < doc["classes"].size(); ++r) {
        out << cell(doc["classes"][r]);
        for (const auto& v : a["normalized"][r]) out << ',' << cell(v);
        out << '\n';
      }
    }
  } else if (kind == "timing") {
    out << cell(doc["group_by"]) << ",mean_minutes,wsi_count\n";
    for (const auto& r : doc["rows"]) out << cell(r["group"]) << ',' << cell(r["mean_minutes"]) << ',' << cell(r["wsi_count"]) << '\n';
  } else if (kind == "batch_comparison") {
    out << "annotator,ACC batch_a,ACC batch_b,F1 batch_a,F1 batch_b\n";
    for (const auto& r : doc["rows"]) {
      auto field = [&](const char* b, const char* m) { return r[b].is_null() ? std::string() : cell(r[b][m]); };
      out << cell(r["annotator"]) << ',' << field("batch_a", "acc") << ',' << field("batch_b", "acc") << ','
          << field("batch_a", "f1") << ',' << field("batch_b", "f1") << '\n';
    }
  } else if (kind == "overlap") {
    out << "class,expert_count,annotator_count,intersection\n";
    for (const auto& r : doc["rows"])
      out << cell(r["class"]) << ',' << cell(r["expert_count"]) << ',' << cell(r["annotator_count"]) << ','
          << cell(r["intersection"]) << '\n';
  }
  return out.str();
}

}  // namespace gigaslide::metrics
