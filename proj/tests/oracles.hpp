#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gigaslide/raster.hpp"

namespace oracles {

using Histogram = std::array<std::uint64_t, 256>;

// Mixtures of a few Gaussian bumps plus sparse noise; totals stay below 1e5
// so the exact integer comparison below cannot overflow.
inline Histogram random_histogram(std::mt19937_64& rng) {
  Histogram h{};
  std::uniform_int_distribution<int> bumps(1, 4), centre(0, 255), count(0, 20000);
  std::uniform_real_distribution<double> spread(1.0, 40.0);
  const int k = bumps(rng);
  for (int b = 0; b < k; ++b) {
    std::normal_distribution<double> g(centre(rng), spread(rng));
    const int n = count(rng) / k + 10;
    for (int i = 0; i < n; ++i) h[std::clamp(static_cast<int>(g(rng)), 0, 255)]++;
  }
  // guarantee two occupied bins
  h[std::uniform_int_distribution<int>(0, 127)(rng)]++;
  h[std::uniform_int_distribution<int>(128, 255)(rng)]++;
  return h;
}

// argmax over t of n0*n1*(mu0 - mu1)^2, compared exactly as
// (n1*S0 - n0*S1)^2 / (n0*n1) with 128-bit integers; first maximum wins.
inline int otsu_exhaustive(const Histogram& h) {
  using i128 = __int128;
  int best = -1;
  i128 best_num = 0, best_den = 1;
  for (int t = 0; t < 256; ++t) {
    i128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int v = 0; v < 256; ++v) {
      if (v <= t) {
        n0 += h[v];
        s0 += static_cast<i128>(v) * h[v];
      } else {
        n1 += h[v];
        s1 += static_cast<i128>(v) * h[v];
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const i128 d = n1 * s0 - n0 * s1;
    const i128 num = d * d, den = n0 * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

inline int windows_brute(int dim, int size, int stride) {
  int n = 0;
  for (int x = 0; x + size <= dim; x += stride) ++n;
  return n;
}

// Level L of an image with longest side m is ceil(side / 2^(top - L)).
inline int top_level(int w, int h) {
  const int m = std::max(w, h);
  int top = 0;
  while ((1 << top) < m) ++top;
  return top;
}

inline int ceil_div_pow2(int v, int k) { return static_cast<int>(std::ceil(v / std::ldexp(1.0, k))); }

// Naive 2x2 box average, rounding half up, partial blocks averaged over the
// pixels they actually contain.
inline gigaslide::Raster halve(const gigaslide::Raster& src) {
  gigaslide::Raster out((src.width + 1) / 2, (src.height + 1) / 2, src.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        int sum = 0, n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = 2 * x + dx, sy = 2 * y + dy;
            if (sx < src.width && sy < src.height) {
              sum += src.at(sx, sy, c);
              ++n;
            }
          }
        out.at(x, y, c) = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
  return out;
}

}  // namespace oracles

namespace oracles {

// Union-find 8-connected labeling; returns component sizes sorted, plus a
// per-pixel representative so partitions can be compared.
struct Partition {
  std::vector<std::size_t> sizes;  // sorted
  std::vector<int> root;           // -1 for background
};

inline Partition components_union_find(const std::vector<std::uint8_t>& bits, int w, int h) {
  std::vector<int> parent(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!bits[y * w + x]) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h || !bits[ny * w + nx]) continue;
          parent[find(y * w + x)] = find(ny * w + nx);
        }
    }
  Partition p;
  p.root.assign(bits.size(), -1);
  std::vector<std::size_t> count(bits.size(), 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) {
      p.root[i] = find(static_cast<int>(i));
      ++count[p.root[i]];
    }
  for (auto c : count)
    if (c) p.sizes.push_back(c);
  std::sort(p.sizes.begin(), p.sizes.end());
  return p;
}

// Cross-shaped erosion/dilation written out directly; out-of-image
// neighbours do not participate.
inline std::vector<std::uint8_t> cross_open(const std::vector<std::uint8_t>& b, int w, int h) {
  auto get = [&](const std::vector<std::uint8_t>& m, int x, int y, int fallback) {
    return (x < 0 || y < 0 || x >= w || y >= h) ? fallback : static_cast<int>(m[y * w + x]);
  };
  std::vector<std::uint8_t> e(b.size()), d(b.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      e[y * w + x] = get(b, x, y, 0) && get(b, x - 1, y, 1) && get(b, x + 1, y, 1) && get(b, x, y - 1, 1) &&
                     get(b, x, y + 1, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      d[y * w + x] = get(e, x, y, 0) || get(e, x - 1, y, 0) || get(e, x + 1, y, 0) || get(e, x, y - 1, 0) ||
                     get(e, x, y + 1, 0);
  return d;
}

// Bilinear interpolation of a 2x2 cell, straight from the definition.
inline double bilinear(double v00, double v10, double v01, double v11, double tx, double ty) {
  return v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty) + v01 * (1 - tx) * ty + v11 * tx * ty;
}

}  // namespace oracles

#include <cmath>

namespace oracles {

// Weighted cross-entropy of a linear softmax head written from scratch:
// sum_i w_i * -log softmax(x_i W + b)[y_i], W row-major [feature][class].
inline double head_loss(const std::vector<double>& W, const std::vector<double>& b, std::size_t classes,
                        const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                        const std::vector<double>& ws) {
  double total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> z(b);
    for (std::size_t f = 0; f < xs[i].size(); ++f)
      for (std::size_t k = 0; k < classes; ++k) z[k] += xs[i][f] * W[f * classes + k];
    // -log p_y = log sum_k exp(z_k - z_y); log1p keeps tiny losses exact
    // when y is the arg-max, which finite differences on saturated heads need.
    const double zy = z[ys[i]];
    double m = zy;
    for (double v : z) m = std::max(m, v);
    double rest = 0;
    for (std::size_t k = 0; k < classes; ++k)
      if (static_cast<int>(k) != ys[i]) rest += std::exp(z[k] - m);
    const double nll = (m == zy) ? std::log1p(rest) : (m - zy) + std::log(std::exp(zy - m) + rest);
    total += ws[i] * nll;
  }
  return total;
}

// Central differences of head_loss over every weight then every bias.
inline std::vector<double> numeric_gradient(std::vector<double> W, std::vector<double> b, std::size_t classes,
                                            const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                                            const std::vector<double>& ws, double h = 1e-6) {
  std::vector<double> g;
  for (std::size_t i = 0; i < W.size(); ++i) {
    const double keep = W[i];
    W[i] = keep + h;
    const double up = head_loss(W, b, classes, xs, ys, ws);
    W[i] = keep - h;
    const double down = head_loss(W, b, classes, xs, ys, ws);
    W[i] = keep;
    g.push_back((up - down) / (2 * h));
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double keep = b[i];
    b[i] = keep + h;
    const double up = head_loss(W, b, classes, xs, ys, ws);
    b[i] = keep - h;
    const double down = head_loss(W, b, classes, xs, ys, ws);
    b[i] = keep;
    g.push_back((up - down) / (2 * h));
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? 0 : std::sqrt(d) / scale;
}

}  // namespace oracles

#include <map>
#include <set>
#include <string>

namespace oracles {

// Fraction of (positive, negative) pairs ranked correctly, ties half.
inline double auc_pairs(const std::vector<int>& truth, const std::vector<double>& s) {
  double good = 0;
  long long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (truth[i] > 0 && truth[j] <= 0) {
        ++pairs;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / static_cast<double>(pairs);
}

// Harmonic mean of precision and recall; 0 when either is undefined or 0.
inline double f1_pr(int cls, const std::vector<int>& pred, const std::vector<int>& truth) {
  double tp = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    predicted += pred[i] == cls;
    actual += truth[i] == cls;
    tp += pred[i] == cls && truth[i] == cls;
  }
  if (predicted == 0 || actual == 0 || tp == 0) return 0.0;
  const double p = tp / predicted, r = tp / actual;
  return 2 * p * r / (p + r);
}

inline double macro_f1_pr(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::set<int> labels(pred.begin(), pred.end());
  labels.insert(truth.begin(), truth.end());
  double s = 0;
  for (int l : labels) s += f1_pr(l, pred, truth);
  return s / static_cast<double>(labels.size());
}

}  // namespace oracles
