#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gigaslide/error.hpp"

namespace gigaslide::metrics {

// ---- region agreement ------------------------------------------------------------

/// TM: model regions decided by the annotator; NT: those rejected;
/// TP: everything the annotator calls tumor (accepted + own tumor drawings).
struct RegionTally {
  long long tm = 0;
  long long nt = 0;
  long long tp = 0;

  RegionTally& operator+=(const RegionTally& o) {
    tm += o.tm;
    nt += o.nt;
    tp += o.tp;
    return *this;
  }
  bool operator==(const RegionTally&) const = default;
};

/// (TM - NT) / TM
inline double recall_t(const RegionTally& t) {
  if (t.tm <= 0) fail(ErrorCode::undefined_metric, "Recall_T is undefined when TM = 0");
  return static_cast<double>(t.tm - t.nt) / static_cast<double>(t.tm);
}

/// (TM - NT) / TP
inline double recall_nt(const RegionTally& t) {
  if (t.tp <= 0) fail(ErrorCode::undefined_metric, "Recall_NT is undefined when TP = 0");
  return static_cast<double>(t.tm - t.nt) / static_cast<double>(t.tp);
}

// ---- classification --------------------------------------------------------------------

/// Mann-Whitney U / (n_pos * n_neg) with mid-ranks, i.e. tied pairs count 1/2.
inline double auc(const std::vector<int>& truth, const std::vector<double>& scores) {
  if (truth.size() != scores.size()) fail(ErrorCode::validation, "truth and scores differ in length");
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  long long n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (truth[order[k]] > 0) rank_sum += mid_rank;
    i = j;
  }
  for (int t : truth) n_pos += t > 0;
  const long long n_neg = static_cast<long long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::undefined_metric, "AUC needs both classes in the ground truth");
  const double u = rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) fail(ErrorCode::validation, "label lists differ in length");
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// 2TP / (2TP + FP + FN) for one class; 0 when the class never occurs.
inline double f1_for(int cls, const std::vector<int>& pred, const std::vector<int>& truth) {
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] == cls && truth[i] == cls;
    fp += pred[i] == cls && truth[i] != cls;
    fn += pred[i] != cls && truth[i] == cls;
  }
  const long long denom = 2 * tp + fp + fn;
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
}

/// Binary labels {0,1}: F1 of class 1. Otherwise the macro average over
/// every label present in either list.
inline double f1_score(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) fail(ErrorCode::validation, "label lists differ in length");
  std::set<int> labels(pred.begin(), pred.end());
  labels.insert(truth.begin(), truth.end());
  const bool binary = std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0 || l == 1; });
  if (binary) return f1_for(1, pred, truth);
  double total = 0;
  for (int l : labels) total += f1_for(l, pred, truth);
  return total / static_cast<double>(labels.size());
}

inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::set<int> labels(pred.begin(), pred.end());
  labels.insert(truth.begin(), truth.end());
  if (labels.empty()) return 0.0;
  double total = 0;
  for (int l : labels) total += f1_for(l, pred, truth);
  return total / static_cast<double>(labels.size());
}

struct ClassificationMetrics {
  double acc = 0;
  double f1 = 0;
  std::optional<double> auc;  // absent when the ground truth has one class
};

/// `scores` are positive-class scores; pass an empty vector to skip AUC.
inline ClassificationMetrics classification_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                                    const std::vector<double>& scores) {
  ClassificationMetrics m;
  m.acc = accuracy(pred, truth);
  m.f1 = f1_score(pred, truth);
  if (!scores.empty()) {
    const bool has_pos = std::any_of(truth.begin(), truth.end(), [](int t) { return t > 0; });
    const bool has_neg = std::any_of(truth.begin(), truth.end(), [](int t) { return t <= 0; });
    if (has_pos && has_neg) m.auc = auc(truth, scores);
  }
  return m;
}

// ---- confusion -------------------------------------------------------------------------

struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<long long>> counts;  // [expert][annotator]
  std::vector<std::vector<double>> normalized;
};

inline std::size_t class_index(const std::vector<std::string>& classes, const std::string& label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) fail(ErrorCode::validation, "label '" + label + "' is not in the class set");
  return static_cast<std::size_t>(it - classes.begin());
}

inline ConfusionMatrix confusion(const std::vector<std::string>& expert_labels,
                                 const std::vector<std::string>& annotator_labels,
                                 const std::vector<std::string>& classes) {
  if (expert_labels.size() != annotator_labels.size())
    fail(ErrorCode::validation, "expert and annotator label lists differ in length");
  const std::size_t c = classes.size();
  ConfusionMatrix m{classes, std::vector<std::vector<long long>>(c, std::vector<long long>(c, 0)),
                    std::vector<std::vector<double>>(c, std::vector<double>(c, 0.0))};
  for (std::size_t i = 0; i < expert_labels.size(); ++i)
    ++m.counts[class_index(classes, expert_labels[i])][class_index(classes, annotator_labels[i])];
  for (std::size_t r = 0; r < c; ++r) {
    const long long row = std::accumulate(m.counts[r].begin(), m.counts[r].end(), 0LL);
    if (row == 0) continue;
    for (std::size_t k = 0; k < c; ++k)
      m.normalized[r][k] = static_cast<double>(m.counts[r][k]) / static_cast<double>(row);
  }
  return m;
}

// ---- expert / annotator overlap ---------------------------------------------------------

struct OverlapCount {
  std::string cls;
  double expert_count = 0;
  double annotator_count = 0;  // mean over annotators
  double intersection = 0;     // mean over annotators
};

struct OverlapReport {
  std::vector<OverlapCount> rows;
  std::vector<std::string> excluded_slides;  // missing a label from some annotator
};

/// `expert` maps slide -> class; each entry of `annotators` maps slide -> class
/// for one annotator. Only slides labeled by the expert and every annotator count.
inline OverlapReport overlap_report(const std::map<std::string, std::string>& expert,
                                    const std::vector<std::map<std::string, std::string>>& annotators,
                                    const std::vector<std::string>& classes) {
  OverlapReport report;
  std::vector<std::string> dense;
  for (const auto& [slide, label] : expert) {
    (void)label;
    const bool everyone = std::all_of(annotators.begin(), annotators.end(),
                                      [&](const auto& a) { return a.count(slide) > 0; });
    (everyone ? dense : report.excluded_slides).push_back(slide);
  }
  const double n_ann = static_cast<double>(annotators.size());
  for (const auto& cls : classes) {
    OverlapCount row{cls, 0, 0, 0};
    for (const auto& slide : dense) {
      const std::string& truth = expert.at(slide);
      class_index(classes, truth);
      if (truth == cls) row.expert_count += 1;
      for (const auto& a : annotators) {
        const auto& given = a.at(slide);
        class_index(classes, given);
        if (given == cls) {
          row.annotator_count += 1;
          if (truth == cls) row.intersection += 1;
        }
      }
    }
    if (n_ann > 0) {
      row.annotator_count /= n_ann;
      row.intersection /= n_ann;
    }
    report.rows.push_back(row);
  }
  return report;
}

// ---- small statistics helpers -----------------------------------------------------------

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation (n - 1); 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.n = values.size();
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace gigaslide::metrics
