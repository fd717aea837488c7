#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gigaslide/error.hpp"
#include "gigaslide/heatmap.hpp"
#include "gigaslide/raster.hpp"
#include "gigaslide/tissue.hpp"

namespace gigaslide::semisup {

using FeatureVector = std::vector<double>;

// ---- feature extraction -----------------------------------------------------------

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual FeatureVector extract(const Raster& patch) const = 0;
};

/// Resizes to the model input (224x224 by default) and summarizes each
/// channel: mean, standard deviation and an 8-bin histogram, all scaled to
/// [0, 1]. 3 * (2 + 8) = 30 values.
class ColorStatsExtractor final : public FeatureExtractor {
 public:
  static constexpr int kBins = 8;

  explicit ColorStatsExtractor(int input_size = 224) : input_size_(input_size) {}

  std::string id() const override { return "color-stats-30"; }
  std::size_t dim() const override { return 3 * (2 + kBins); }

  FeatureVector extract(const Raster& patch) const override {
    if (patch.channels != 3 || patch.empty()) fail(ErrorCode::validation, "patch must be a non-empty RGB raster");
    const Raster input = (patch.width == input_size_ && patch.height == input_size_)
                             ? patch
                             : box_resize(patch, input_size_, input_size_);
    const double n = static_cast<double>(input.width) * input.height;
    FeatureVector out;
    out.reserve(dim());
    for (int c = 0; c < 3; ++c) {
      double sum = 0, sum2 = 0;
      std::array<double, kBins> hist{};
      for (std::size_t i = c; i < input.pixels.size(); i += 3) {
        const double v = input.pixels[i];
        sum += v;
        sum2 += v * v;
        hist[input.pixels[i] / (256 / kBins)] += 1;
      }
      const double mean = sum / n;
      const double var = std::max(0.0, sum2 / n - mean * mean);
      out.push_back(mean / 255.0);
      out.push_back(std::sqrt(var) / 255.0);
      for (double h : hist) out.push_back(h / n);
    }
    return out;
  }

 private:
  int input_size_;
};

// ---- classifier head ------------------------------------------------------------------

/// Linear softmax layer: logits = x^T W + b, W is feature_dim x classes.
struct ClassifierHead {
  std::size_t feature_dim = 0;
  std::size_t classes = 0;
  std::vector<double> weights;  // row-major [feature][class]
  std::vector<double> bias;

  ClassifierHead() = default;
  ClassifierHead(std::size_t dim, std::size_t c) : feature_dim(dim), classes(c), weights(dim * c, 0.0), bias(c, 0.0) {}

  double& w(std::size_t f, std::size_t k) { return weights[f * classes + k]; }
  double w(std::size_t f, std::size_t k) const { return weights[f * classes + k]; }

  std::vector<double> logits(const FeatureVector& x) const {
    if (x.size() != feature_dim) fail(ErrorCode::validation, "feature dimension mismatch");
    std::vector<double> z = bias;
    for (std::size_t f = 0; f < feature_dim; ++f) {
      const double xf = x[f];
      if (xf == 0) continue;
      for (std::size_t k = 0; k < classes; ++k) z[k] += xf * w(f, k);
    }
    return z;
  }

  bool operator==(const ClassifierHead&) const = default;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) total += (p[k] = std::exp(logits[k] - top));
  for (auto& v : p) v /= total;
  return p;
}

inline std::vector<double> predict_proba(const ClassifierHead& head, const FeatureVector& x) {
  return softmax(head.logits(x));
}

// ---- weighted cross-entropy ------------------------------------------------------------

constexpr double kProbabilityFloor = 1e-12;

struct ProbabilityLoss {
  double loss = 0;
  std::vector<std::vector<double>> grad_logits;  // d loss / d logits, per sample
};

/// sum_i w_i * -log p_i[y_i]; the gradient through a softmax is w_i (p_i - e_{y_i}).
inline ProbabilityLoss weighted_cross_entropy(const std::vector<std::vector<double>>& probs,
                                              const std::vector<int>& labels, const std::vector<double>& weights) {
  if (probs.size() != labels.size() || probs.size() != weights.size())
    fail(ErrorCode::validation, "probs, labels and weights must have equal length");
  ProbabilityLoss out;
  out.grad_logits.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= p.size()) fail(ErrorCode::validation, "label out of range");
    out.loss += weights[i] * -std::log(std::max(p[static_cast<std::size_t>(y)], kProbabilityFloor));
    auto& g = out.grad_logits[i];
    g.resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k)
      g[k] = weights[i] * (p[k] - (static_cast<int>(k) == y ? 1.0 : 0.0));
  }
  return out;
}

struct HeadGradient {
  double loss = 0;
  ClassifierHead grad;  // same shape as the head
};

inline HeadGradient loss_and_gradient(const ClassifierHead& head, const std::vector<FeatureVector>& features,
                                      const std::vector<int>& labels, const std::vector<double>& weights) {
  std::vector<std::vector<double>> probs;
  probs.reserve(features.size());
  for (const auto& x : features) probs.push_back(predict_proba(head, x));
  auto pl = weighted_cross_entropy(probs, labels, weights);
  HeadGradient out{pl.loss, ClassifierHead(head.feature_dim, head.classes)};
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& g = pl.grad_logits[i];
    for (std::size_t k = 0; k < head.classes; ++k) out.grad.bias[k] += g[k];
    for (std::size_t f = 0; f < head.feature_dim; ++f) {
      const double xf = features[i][f];
      for (std::size_t k = 0; k < head.classes; ++k) out.grad.w(f, k) += xf * g[k];
    }
  }
  return out;
}

// ---- training -----------------------------------------------------------------------

struct Hyperparameters {
  double learning_rate = 0.1;
  int epochs = 100;
  int batch_size = 32;
  std::optional<std::uint64_t> seed;  // required
};

inline void to_json(nlohmann::json& j, const Hyperparameters& h) {
  j = {{"learning_rate", h.learning_rate}, {"epochs", h.epochs}, {"batch_size", h.batch_size}};
  j["seed"] = h.seed ? nlohmann::json(*h.seed) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, Hyperparameters& h) {
  h.learning_rate = j.at("learning_rate").get<double>();
  h.epochs = j.at("epochs").get<int>();
  h.batch_size = j.at("batch_size").get<int>();
  if (j.contains("seed") && !j["seed"].is_null()) h.seed = j["seed"].get<std::uint64_t>();
}

struct FeatureSet {
  std::vector<FeatureVector> features;
  std::vector<int> labels;
  std::vector<double> weights;
};

struct TrainingResult {
  ClassifierHead head;
  std::vector<double> epoch_losses;  // mean weighted loss per sample seen, per epoch
};

/// Mini-batch gradient descent from a zero head. Each step moves by the
/// batch-mean gradient; the sample order is reshuffled every epoch from
/// the seeded generator, so equal inputs give bitwise-equal parameters.
inline TrainingResult fit(const FeatureSet& data, std::size_t classes, const Hyperparameters& hyper) {
  if (data.features.empty()) fail(ErrorCode::validation, "training set is empty");
  if (!hyper.seed) fail(ErrorCode::validation, "a training seed is required");
  if (hyper.epochs < 0 || hyper.batch_size < 1 || !(hyper.learning_rate > 0))
    fail(ErrorCode::validation, "invalid hyperparameters");
  if (classes < 1) fail(ErrorCode::validation, "need at least one class");
  const std::size_t dim = data.features.front().size();
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    if (data.features[i].size() != dim) fail(ErrorCode::validation, "feature dimension mismatch in training set");
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= classes)
      fail(ErrorCode::validation, "label out of range");
  }

  TrainingResult result{ClassifierHead(dim, classes), {}};
  auto& head = result.head;
  std::mt19937_64 rng(*hyper.seed);
  std::vector<std::size_t> order(data.features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<FeatureVector> bx;
  std::vector<int> by;
  std::vector<double> bw;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      bx.clear();
      by.clear();
      bw.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(data.features[order[i]]);
        by.push_back(data.labels[order[i]]);
        bw.push_back(data.weights[order[i]]);
      }
      const auto g = loss_and_gradient(head, bx, by, bw);
      epoch_loss += g.loss;
      const double step = hyper.learning_rate / static_cast<double>(end - start);
      for (std::size_t i = 0; i < head.weights.size(); ++i) head.weights[i] -= step * g.grad.weights[i];
      for (std::size_t k = 0; k < classes; ++k) head.bias[k] -= step * g.grad.bias[k];
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

struct LabeledFeatures {
  std::vector<FeatureVector> features;
  std::vector<int> labels;
  std::size_t classes = 2;
};

struct PseudoSample {
  FeatureVector features;
  int label = 0;        // argmax of the teacher softmax
  double weight = 0;    // max of the teacher softmax, in [1/C, 1]
};

/// Teacher: every labeled sample carries weight 1.
inline TrainingResult train_teacher(const LabeledFeatures& labeled, const Hyperparameters& hyper) {
  FeatureSet data{labeled.features, labeled.labels, std::vector<double>(labeled.features.size(), 1.0)};
  return fit(data, labeled.classes, hyper);
}

inline PseudoSample pseudo_label_one(const ClassifierHead& teacher, FeatureVector x) {
  const auto p = predict_proba(teacher, x);
  const auto best = std::max_element(p.begin(), p.end());
  return {std::move(x), static_cast<int>(best - p.begin()), *best};
}

inline std::vector<PseudoSample> pseudo_label(const ClassifierHead& teacher,
                                              const std::vector<FeatureVector>& unlabeled) {
  std::vector<PseudoSample> out;
  out.reserve(unlabeled.size());
  for (const auto& x : unlabeled) out.push_back(pseudo_label_one(teacher, x));
  return out;
}

/// Student: labeled samples (weight 1) followed by pseudo samples weighted by
/// teacher confidence. Zero-weight samples add nothing to the objective and
/// are left out of the mini-batch schedule.
inline TrainingResult train_student(const LabeledFeatures& labeled, const std::vector<PseudoSample>& pseudo,
                                    const Hyperparameters& hyper) {
  FeatureSet data{labeled.features, labeled.labels, std::vector<double>(labeled.features.size(), 1.0)};
  if (data.features.empty()) fail(ErrorCode::validation, "student needs a non-empty labeled set");
  for (const auto& s : pseudo) {
    if (s.weight <= 0) continue;
    data.features.push_back(s.features);
    data.labels.push_back(s.label);
    data.weights.push_back(s.weight);
  }
  return fit(data, labeled.classes, hyper);
}

inline int predict_class(const ClassifierHead& head, const FeatureVector& x) {
  const auto p = predict_proba(head, x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double accuracy(const ClassifierHead& head, const std::vector<FeatureVector>& xs, const std::vector<int>& ys) {
  if (xs.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) hits += predict_class(head, xs[i]) == ys[i];
  return static_cast<double>(hits) / static_cast<double>(xs.size());
}

// ---- raster-level wrappers ----------------------------------------------------------

struct LabeledSet {
  std::vector<Raster> patches;
  std::vector<int> labels;
  std::size_t classes = 2;
};

inline std::vector<FeatureVector> extract_all(const FeatureExtractor& f, const std::vector<Raster>& patches) {
  std::vector<FeatureVector> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    out.push_back(f.extract(p));
    if (out.back().size() != f.dim()) fail(ErrorCode::validation, "extractor returned an unexpected dimension");
  }
  return out;
}

inline LabeledFeatures to_features(const LabeledSet& set, const FeatureExtractor& f) {
  if (set.patches.size() != set.labels.size()) fail(ErrorCode::validation, "patches and labels differ in length");
  return {extract_all(f, set.patches), set.labels, set.classes};
}

inline TrainingResult train_teacher(const LabeledSet& set, const FeatureExtractor& f, const Hyperparameters& hyper) {
  return train_teacher(to_features(set, f), hyper);
}

inline std::vector<PseudoSample> pseudo_label(const ClassifierHead& teacher, const FeatureExtractor& f,
                                              const std::vector<Raster>& unlabeled) {
  return pseudo_label(teacher, extract_all(f, unlabeled));
}

inline TrainingResult train_student(const LabeledSet& set, const std::vector<PseudoSample>& pseudo,
                                    const FeatureExtractor& f, const Hyperparameters& hyper) {
  return train_student(to_features(set, f), pseudo, hyper);
}

/// Tumor probability (softmax component `tumor_class`) for every kept patch.
inline std::vector<heatmap::PatchPrediction> predict_patches(const ClassifierHead& head, const FeatureExtractor& f,
                                                             const pyramid::PatchGrid& grid, const Raster& slide,
                                                             const std::string& slide_name, int tumor_class = 1) {
  if (static_cast<std::size_t>(tumor_class) >= head.classes)
    fail(ErrorCode::validation, "tumor class index exceeds the head's class count");
  if (slide.width < grid.width || slide.height < grid.height)
    fail(ErrorCode::validation, "slide raster is smaller than the patch grid extent");
  std::vector<heatmap::PatchPrediction> out;
  out.reserve(grid.kept.size());
  for (auto idx : grid.kept) {
    const auto pos = grid.positions[idx];
    const auto patch = crop(slide, pos.x, pos.y, grid.patch_size, grid.patch_size);
    const auto p = predict_proba(head, f.extract(patch));
    out.push_back({slide_name, pos.x, pos.y, p[static_cast<std::size_t>(tumor_class)]});
  }
  return out;
}

// ---- model document ------------------------------------------------------------------

struct Model {
  ClassifierHead head;
  std::string feature_extractor;
  Hyperparameters hyper;
  int tumor_class = 1;
};

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json j;
  j["format"] = "gigaslide-model/1";
  j["feature_extractor"] = m.feature_extractor;
  j["feature_dim"] = m.head.feature_dim;
  j["classes"] = m.head.classes;
  j["tumor_class"] = m.tumor_class;
  j["weights"] = m.head.weights;
  j["bias"] = m.head.bias;
  j["seed"] = m.hyper.seed ? nlohmann::json(*m.hyper.seed) : nlohmann::json(nullptr);
  j["hyperparameters"] = m.hyper;
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "gigaslide-model/1") fail(ErrorCode::validation, "unknown model format");
    Model m;
    m.feature_extractor = j.at("feature_extractor").get<std::string>();
    m.head.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.head.classes = j.at("classes").get<std::size_t>();
    m.head.weights = j.at("weights").get<std::vector<double>>();
    m.head.bias = j.at("bias").get<std::vector<double>>();
    m.tumor_class = j.value("tumor_class", 1);
    m.hyper = j.at("hyperparameters").get<Hyperparameters>();
    if (m.head.weights.size() != m.head.feature_dim * m.head.classes || m.head.bias.size() != m.head.classes)
      fail(ErrorCode::validation, "model parameter shapes do not match feature_dim x classes");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed model document: ") + e.what());
  }
}

inline std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id) {
  if (id == "color-stats-30") return std::make_unique<ColorStatsExtractor>();
  fail(ErrorCode::validation, "unknown feature extractor '" + id + "'");
}

}  // namespace gigaslide::semisup
