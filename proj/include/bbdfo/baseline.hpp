#pragma once

// Random direct-search comparator: square-ish patches of the perturbation are
// redrawn at +/-eps and kept when the loss improves. Shares the budget,
// feasibility and early-exit contracts of run_attack.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "bbdfo/attack.hpp"
#include "bbdfo/classifier.hpp"

namespace bbdfo {

/// Patch area as a fraction of the image area; halves at fixed query counts.
inline double baseline_patch_fraction(std::size_t query) {
  static constexpr std::size_t kHalvings[] = {10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000};
  double p = 0.1;
  for (std::size_t at : kHalvings)
    if (query > at) p *= 0.5;
  return p;
}

template <QueryOracle Oracle>
AttackResult random_baseline_attack(const AttackConfig& cfg, Oracle& oracle, const InputTensor& x,
                                    std::size_t target, const AttackHooks& hooks = {}) {
  cfg.validate();
  detail::AttackSession<Oracle> session(oracle, x, target, cfg.max_queries, hooks);
  const Shape& shape = x.shape;
  Vector eta(x.size(), 0.0);

  if (session.budget_left() == 0) return session.finish(false, std::move(eta));
  Evaluation cur = session.evaluate(eta);
  if (cur.halt) return session.finish(true, std::move(eta));

  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> coin(0, 1);
  bool success = false;
  Vector candidate;
  while (session.budget_left() > 0) {
    const double frac = baseline_patch_fraction(session.used());
    const auto side = static_cast<std::size_t>(std::clamp<double>(
        std::round(std::sqrt(frac * static_cast<double>(shape.height * shape.width))), 1.0,
        static_cast<double>(std::min(shape.height, shape.width))));
    std::uniform_int_distribution<std::size_t> row0(0, shape.height - side);
    std::uniform_int_distribution<std::size_t> col0(0, shape.width - side);
    const std::size_t r0 = row0(rng);
    const std::size_t c0 = col0(rng);

    candidate = eta;
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
      const double value = coin(rng) ? cfg.epsilon : -cfg.epsilon;
      for (std::size_t r = r0; r < r0 + side; ++r)
        for (std::size_t c = c0; c < c0 + side; ++c) {
          const std::size_t i = shape.index(r, c, ch);
          // Keep only the part of the step that survives reprojection.
          candidate[i] = std::clamp(x.data[i] + value, x.lower, x.upper) - x.data[i];
        }
    }

    const Evaluation e = session.evaluate(candidate);
    if (e.halt || e.value < cur.value) {
      eta.swap(candidate);
      cur = e;
      if (hooks.on_batch) hooks.on_batch(eta);
    }
    if (e.halt) {
      success = true;
      break;
    }
  }
  return session.finish(success, std::move(eta));
}

}  // namespace bbdfo
