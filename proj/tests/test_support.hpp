#pragma once

// Independent oracles and fixture builders shared by the test suites. Nothing
// here calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "bbdfo.hpp"

namespace bbdfo::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(BBDFO_FIXTURE_DIR) / name;
}

using Matrix = std::vector<std::vector<double>>;

/// Gaussian elimination with partial pivoting. Throws on singular systems.
inline std::vector<double> gauss_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-13) throw std::runtime_error("singular");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k < n; ++k) a[r][k] -= f * a[col][k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Naive 8-neighbour population variance, written as a direct double loop.
inline std::vector<double> naive_neighbour_variance(std::size_t h, std::size_t w, std::size_t c,
                                                    const std::vector<double>& v) {
  std::vector<double> out(h * w * c, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::vector<double> nb;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const long ii = static_cast<long>(i) + di;
            const long jj = static_cast<long>(j) + dj;
            if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
            nb.push_back(v[(static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * c + ch]);
          }
        double var = 0.0;
        if (!nb.empty()) {
          double mean = 0.0;
          for (double x : nb) mean += x;
          mean /= static_cast<double>(nb.size());
          for (double x : nb) var += (x - mean) * (x - mean);
          var /= static_cast<double>(nb.size());
        }
        out[(i * w + j) * c + ch] = var;
      }
  return out;
}

/// Order by descending score with ascending-index tie-break, via pairwise
/// comparison counting (no sort).
inline std::vector<std::size_t> naive_descending_order(const std::vector<double>& s) {
  std::vector<std::size_t> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank;
    out[rank] = i;
  }
  return out;
}

/// Dense 0/1 lifting matrix built from first principles: pixel (r, c, ch)
/// belongs to band floor-based row/col blocks with trailing remainders.
inline Matrix dense_block_matrix(const Shape& s, std::size_t gh, std::size_t gw) {
  auto band_of = [](std::size_t pos, std::size_t extent, std::size_t bands) {
    const std::size_t base = extent / bands;
    const std::size_t extra = extent % bands;
    const std::size_t short_total = (bands - extra) * base;
    if (pos < short_total) return pos / base;
    return (bands - extra) + (pos - short_total) / (base + 1);
  };
  const std::size_t m = gh * gw * s.channels;
  Matrix d(s.size(), std::vector<double>(m, 0.0));
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c)
      for (std::size_t ch = 0; ch < s.channels; ++ch) {
        const std::size_t j = (band_of(r, s.height, gh) * gw + band_of(c, s.width, gw)) * s.channels + ch;
        d[(r * s.width + c) * s.channels + ch][j] = 1.0;
      }
  return d;
}

/// Single softmax layer z = W x + b.
inline ClassifierModel linear_softmax(const Shape& shape, std::size_t classes, std::uint64_t seed,
                                      double weight_scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, weight_scale);
  DenseLayer l;
  l.rows = classes;
  l.cols = shape.size();
  l.weights.resize(l.rows * l.cols);
  for (double& w : l.weights) w = nd(rng);
  l.bias.assign(classes, 0.0);
  l.activation = Activation::softmax;
  return ClassifierModel(shape, {l});
}

inline std::vector<double> logits_of(const ClassifierModel& m, const std::vector<double>& x) {
  const auto& l = m.layers().front();
  std::vector<double> z(l.rows);
  for (std::size_t r = 0; r < l.rows; ++r) {
    z[r] = l.bias[r];
    for (std::size_t c = 0; c < l.cols; ++c) z[r] += l.weights[r * l.cols + c] * x[c];
  }
  return z;
}

inline std::size_t argmax_of(const std::vector<double>& z) {
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

/// White-box sign attack along sign(w_t - w_c), clipped to [lower, upper].
inline std::vector<double> sign_attack_input(const ClassifierModel& m, const InputTensor& x,
                                             std::size_t t, std::size_t c, double eps) {
  const auto& l = m.layers().front();
  std::vector<double> out(x.data);
  for (std::size_t i = 0; i < l.cols; ++i) {
    const double d = l.weights[t * l.cols + i] - l.weights[c * l.cols + i];
    const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    out[i] = std::clamp(x.data[i] + eps * s, x.lower, x.upper);
  }
  return out;
}

/// Smallest eps on a 1e-5 grid at which the sign attack reaches class t.
inline double sign_attack_threshold(const ClassifierModel& m, const InputTensor& x, std::size_t t,
                                    std::size_t c) {
  for (double eps = 1e-5; eps <= 1.0; eps += 1e-5)
    if (argmax_of(logits_of(m, sign_attack_input(m, x, t, c, eps))) == t) return eps;
  return std::numeric_limits<double>::infinity();
}

/// True when no eps-bounded, range-respecting perturbation can lift the
/// logit of t above that of c (upper bound on the achievable margin gain).
inline bool provably_infeasible(const ClassifierModel& m, const InputTensor& x, std::size_t t,
                                std::size_t c, double eps) {
  const auto& l = m.layers().front();
  const auto z = logits_of(m, x.data);
  double gain = 0.0;
  for (std::size_t i = 0; i < l.cols; ++i) {
    const double d = l.weights[t * l.cols + i] - l.weights[c * l.cols + i];
    const double room = d > 0 ? std::min(eps, x.upper - x.data[i]) : std::min(eps, x.data[i] - x.lower);
    gain += std::abs(d) * std::max(room, 0.0);
  }
  return z[c] - z[t] > gain;
}

inline InputTensor uniform_image(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  InputTensor t;
  t.shape = s;
  t.data.resize(s.size());
  for (double& v : t.data) v = u(rng);
  return t;
}

}  // namespace bbdfo::testing
