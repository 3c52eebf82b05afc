#pragma once

// Coordinate batches for sub-domain optimization: random subsets, random
// disjoint partitions, and partitions ordered by local intensity variance.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbdfo/classifier.hpp"
#include "bbdfo/errors.hpp"
#include "bbdfo/lifting.hpp"
#include "bbdfo/vector.hpp"

namespace bbdfo {

using Rng = std::mt19937_64;
using IndexBatch = std::vector<std::size_t>;

enum class SamplingStrategy { random, ordered, variance };

inline SamplingStrategy parse_strategy(std::string_view name) {
  if (name == "random") return SamplingStrategy::random;
  if (name == "ordered") return SamplingStrategy::ordered;
  if (name == "variance") return SamplingStrategy::variance;
  throw ConfigError("unknown sampling strategy '" + std::string(name) + "'");
}

inline std::string_view strategy_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::random: return "random";
    case SamplingStrategy::ordered: return "ordered";
    case SamplingStrategy::variance: return "variance";
  }
  return "variance";
}

/// One sweep of coordinate batches over an n-dimensional domain.
struct SamplingPlan {
  SamplingStrategy strategy = SamplingStrategy::variance;
  std::size_t n = 0;
  std::size_t b = 0;
  std::vector<IndexBatch> batches;
  /// The ordering depends on the current image and must be rebuilt before
  /// the next sweep.
  bool recompute_each_sweep = false;
};

namespace detail {
inline void check_plan_args(std::size_t n, std::size_t b) {
  if (n == 0) throw ConfigError("domain dimension must be positive");
  if (b == 0 || b > n)
    throw ConfigError("batch size " + std::to_string(b) + " must lie in [1, " + std::to_string(n) + "]");
}

inline std::vector<IndexBatch> chunk(std::span<const std::size_t> order, std::size_t b) {
  std::vector<IndexBatch> out;
  for (std::size_t start = 0; start < order.size(); start += b) {
    const std::size_t end = std::min(order.size(), start + b);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

/// Indices sorted by score descending, ties by ascending index.
inline std::vector<std::size_t> descending_order(std::span<const double> score) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return idx;
}

/// Population variance of `vals`; zero when empty.
inline double population_variance(std::span<const double> vals) {
  if (vals.empty()) return 0.0;
  // Exact zero for flat neighbourhoods; the mean of repeated values can round.
  if (std::all_of(vals.begin(), vals.end(), [&](double v) { return v == vals[0]; })) return 0.0;
  double sum = 0.0;
  for (double v : vals) sum += v;
  const double mean = sum / static_cast<double>(vals.size());
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(vals.size());
}

/// Variance over the in-bounds 8-neighbourhood of every cell of an
/// (h, w, c) grid, channel by channel, centre excluded.
inline Vector neighbourhood_variance(const Shape& grid, std::span<const double> values) {
  Vector out(grid.size(), 0.0);
  std::vector<double> nb;
  nb.reserve(8);
  const auto h = static_cast<std::ptrdiff_t>(grid.height);
  const auto w = static_cast<std::ptrdiff_t>(grid.width);
  for (std::ptrdiff_t r = 0; r < h; ++r)
    for (std::ptrdiff_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < grid.channels; ++ch) {
        nb.clear();
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
          for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const std::ptrdiff_t rr = r + dr;
            const std::ptrdiff_t cc = c + dc;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
            nb.push_back(values[grid.index(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc), ch)]);
          }
        out[grid.index(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch)] =
            population_variance(nb);
      }
  return out;
}
}  // namespace detail

/// Each batch is an independent uniform b-subset of {0..n-1}; one sweep holds
/// ceil(n/b) batches.
inline SamplingPlan random_plan(std::size_t n, std::size_t b, Rng& rng) {
  detail::check_plan_args(n, b);
  SamplingPlan plan{SamplingStrategy::random, n, b, {}, false};
  std::vector<std::size_t> pool(n);
  const std::size_t count = (n + b - 1) / b;
  for (std::size_t k = 0; k < count; ++k) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < b; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    plan.batches.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return plan;
}

inline SamplingPlan random_plan(std::size_t n, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  return random_plan(n, b, rng);
}

/// A random permutation of {0..n-1} cut into ceil(n/b) disjoint batches.
inline SamplingPlan ordered_plan(std::size_t n, std::size_t b, Rng& rng) {
  detail::check_plan_args(n, b);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return {SamplingStrategy::ordered, n, b, detail::chunk(perm, b), false};
}

inline SamplingPlan ordered_plan(std::size_t n, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  return ordered_plan(n, b, rng);
}

/// Population variance of each pixel's in-bounds 8-neighbours, same channel.
inline Vector pixel_variance_map(const Shape& shape, std::span<const double> data) {
  if (data.size() != shape.size()) throw DimensionError("image data/shape mismatch");
  return detail::neighbourhood_variance(shape, data);
}

inline Vector pixel_variance_map(const InputTensor& x) { return pixel_variance_map(x.shape, x.data); }

/// Pixels in decreasing local variance, chunked into batches of b.
inline SamplingPlan variance_plan(const Shape& shape, std::span<const double> data, std::size_t b) {
  detail::check_plan_args(shape.size(), b);
  const Vector var = pixel_variance_map(shape, data);
  const auto order = detail::descending_order(var);
  return {SamplingStrategy::variance, shape.size(), b, detail::chunk(order, b), true};
}

inline SamplingPlan variance_plan(const InputTensor& x, std::size_t b) {
  return variance_plan(x.shape, x.data, b);
}

/// Mean intensity of every block of `lifting`.
inline Vector block_means(const LiftingOperator& lifting, std::span<const double> data) {
  if (data.size() != lifting.num_pixels()) throw DimensionError("image data/lifting mismatch");
  Vector means(lifting.num_blocks(), 0.0);
  for (std::size_t k = 0; k < means.size(); ++k) {
    const auto& pix = lifting.pixels_of(k);
    double sum = 0.0;
    for (std::size_t p : pix) sum += data[p];
    means[k] = sum / static_cast<double>(pix.size());
  }
  return means;
}

/// Blocks in decreasing variance of mean intensity over their neighbouring
/// blocks on the coarse grid (8-neighbourhood, same channel), ties ascending.
inline std::vector<std::size_t> block_variance_order(std::span<const double> data,
                                                     const LiftingOperator& lifting) {
  const Vector means = block_means(lifting, data);
  const Shape grid{lifting.grid_h(), lifting.grid_w(), lifting.image_shape().channels};
  const Vector var = detail::neighbourhood_variance(grid, means);
  return detail::descending_order(var);
}

inline std::vector<std::size_t> block_variance_order(const InputTensor& x,
                                                     const LiftingOperator& lifting) {
  if (!(x.shape == lifting.image_shape())) throw DimensionError("image/lifting shape mismatch");
  return block_variance_order(x.data, lifting);
}

/// Produces successive sweeps over the variables of a lifting for the
/// configured strategy. Variance sweeps are ordered on the image passed in.
class BatchScheduler {
 public:
  BatchScheduler(SamplingStrategy strategy, std::size_t batch_size, std::uint64_t seed)
      : strategy_(strategy), b_(batch_size), rng_(seed) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }

  [[nodiscard]] SamplingStrategy strategy() const noexcept { return strategy_; }

  SamplingPlan next_sweep(const LiftingOperator& lifting, std::span<const double> image) {
    const std::size_t m = lifting.num_blocks();
    const std::size_t b = std::min(b_, m);
    switch (strategy_) {
      case SamplingStrategy::random:
        return random_plan(m, b, rng_);
      case SamplingStrategy::ordered:
        return ordered_plan(m, b, rng_);
      case SamplingStrategy::variance:
        break;
    }
    if (lifting.is_pixel_level()) return variance_plan(lifting.image_shape(), image, b);
    const auto order = block_variance_order(image, lifting);
    return {SamplingStrategy::variance, m, b, detail::chunk(order, b), true};
  }

 private:
  SamplingStrategy strategy_;
  std::size_t b_;
  Rng rng_;
};

}  // namespace bbdfo
