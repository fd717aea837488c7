#pragma once

// Seeded synthetic data shared by the unit and acceptance suites.

#include <random>
#include <vector>

#include "gigaslide/semisup.hpp"

namespace fixtures {

struct TwoClusters {
  gigaslide::semisup::LabeledFeatures labeled;
  std::vector<gigaslide::semisup::FeatureVector> unlabeled;
  std::vector<gigaslide::semisup::FeatureVector> heldout;
  std::vector<int> heldout_labels;
};

// Two Gaussian clusters in 2-D with a low-density gap between them: means
// (-1, 0) and (1, 0), sd 0.5 across the gap and 2 along it. Twenty labels
// pin the gap direction only loosely; the unlabeled mass does the rest.
inline TwoClusters two_clusters(std::uint64_t seed, std::size_t n_labeled = 20, std::size_t n_unlabeled = 500,
                                std::size_t n_heldout = 200) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&](int cls) {
    const double s = cls ? 1.0 : -1.0;
    return gigaslide::semisup::FeatureVector{s * 1.0 + 0.5 * noise(rng), 2.0 * noise(rng)};
  };
  TwoClusters out;
  out.labeled.classes = 2;
  for (std::size_t i = 0; i < n_labeled; ++i) {
    const int cls = static_cast<int>(i % 2);
    out.labeled.features.push_back(draw(cls));
    out.labeled.labels.push_back(cls);
  }
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n_unlabeled; ++i) out.unlabeled.push_back(draw(coin(rng)));
  for (std::size_t i = 0; i < n_heldout; ++i) {
    const int cls = coin(rng);
    out.heldout.push_back(draw(cls));
    out.heldout_labels.push_back(cls);
  }
  return out;
}

struct BenchmarkRun {
  double teacher = 0;
  double student = 0;
};

inline BenchmarkRun run_teacher_student(std::uint64_t seed) {
  using namespace gigaslide::semisup;
  const auto data = two_clusters(seed);
  Hyperparameters h;
  h.seed = seed;
  const auto teacher = train_teacher(data.labeled, h);
  const auto student = train_student(data.labeled, pseudo_label(teacher.head, data.unlabeled), h);
  return {accuracy(teacher.head, data.heldout, data.heldout_labels),
          accuracy(student.head, data.heldout, data.heldout_labels)};
}

}  // namespace fixtures
