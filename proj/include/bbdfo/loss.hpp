#pragma once

// Targeted misclassification objective and success predicate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "bbdfo/errors.hpp"

namespace bbdfo {

/// Floor applied to both log arguments so the loss stays finite.
inline constexpr double kLogFloor = 1e-30;

struct TargetSpec {
  std::size_t target_class = 0;
  std::size_t original_class = 0;

  void validate(std::size_t num_classes) const {
    if (target_class >= num_classes || original_class >= num_classes)
      throw ConfigError("class index out of range");
    if (target_class == original_class)
      throw ConfigError("target class must differ from the original class");
  }
};

namespace detail {
inline void check_target(std::span<const double> probs, std::size_t t) {
  if (t >= probs.size())
    throw ConfigError("target class " + std::to_string(t) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
}
}  // namespace detail

/// log(sum_{j != t} p_j) - log(p_t), both arguments floored at kLogFloor.
inline double adversarial_loss(std::span<const double> probs, std::size_t t) {
  detail::check_target(probs, t);
  double others = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j)
    if (j != t) others += probs[j];
  return std::log(std::max(others, kLogFloor)) - std::log(std::max(probs[t], kLogFloor));
}

/// True iff p_t >= max_{j != t} p_j. Exact ties count as success.
inline bool is_adversarial(std::span<const double> probs, std::size_t t) {
  detail::check_target(probs, t);
  for (std::size_t j = 0; j < probs.size(); ++j)
    if (j != t && probs[j] > probs[t]) return false;
  return true;
}

}  // namespace bbdfo
