#pragma once

// Targeted black-box attack: hierarchical block liftings swept in batches of
// b variables, each batch minimized by the trust-region solver under an
// l-infinity budget on the accumulated perturbation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bbdfo/classifier.hpp"
#include "bbdfo/errors.hpp"
#include "bbdfo/lifting.hpp"
#include "bbdfo/loss.hpp"
#include "bbdfo/sampling.hpp"
#include "bbdfo/trust_region.hpp"
#include "bbdfo/vector.hpp"

namespace bbdfo {

struct AttackConfig {
  double epsilon = 0.1;               ///< l-infinity budget on the total perturbation
  std::size_t max_queries = 3000;     ///< n_max
  std::size_t batch_size = 50;        ///< b
  ModelKind model_kind = ModelKind::linear;
  /// kappa, total evaluations per batch including model building; 0 means
  /// q + extra_evaluations.
  std::size_t queries_per_batch = 0;
  std::size_t extra_evaluations = 5;
  std::size_t initial_grid_h = 4;
  std::size_t initial_grid_w = 4;
  SamplingStrategy strategy = SamplingStrategy::variance;
  double trust_radius_fraction = 1.0 / 3.0;  ///< initial radius / widest variable interval
  double shrink_factor = 0.5;
  double min_radius_ratio = 1e-4;
  /// Block liftings are used only when the input has more entries than this.
  std::size_t hierarchy_threshold = 4096;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t model_samples() const noexcept {
    return model_kind == ModelKind::linear ? batch_size + 1 : 2 * batch_size + 1;
  }
  [[nodiscard]] std::size_t kappa() const noexcept {
    return queries_per_batch != 0 ? queries_per_batch : model_samples() + extra_evaluations;
  }

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive");
    if (max_queries == 0) throw ConfigError("query budget must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (kappa() < model_samples())
      throw ConfigError("queries per batch (" + std::to_string(kappa()) +
                        ") must cover the model samples (" + std::to_string(model_samples()) + ")");
    if (initial_grid_h == 0 || initial_grid_w == 0) throw ConfigError("initial grid must be positive");
    if (!(trust_radius_fraction > 0.0 && trust_radius_fraction <= 1.0))
      throw ConfigError("trust radius fraction must lie in (0, 1]");
    if (!(shrink_factor > 0.0 && shrink_factor < 1.0))
      throw ConfigError("shrink factor must lie in (0, 1)");
    if (!(min_radius_ratio > 0.0)) throw ConfigError("minimum radius ratio must be positive");
  }
};

struct LossPoint {
  std::size_t query = 0;  ///< 1-based query index within the attack
  double best_loss = 0.0;
};

struct LevelRecord {
  std::size_t level = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t variables = 0;    ///< m
  std::size_t first_query = 0;  ///< queries used when the level started
};

struct AttackResult {
  bool success = false;
  bool verified = false;  ///< uncounted re-check that the final input is classified as the target
  std::size_t queries_used = 0;
  Vector perturbation;
  std::vector<LossPoint> loss_trace;
  std::size_t levels_completed = 0;
  std::vector<LevelRecord> levels;
  std::size_t batches = 0;
  bool stalled = false;  ///< a full sweep could not spend any query
};

/// Optional observers; used by audits and tests.
struct AttackHooks {
  std::function<void(std::span<const double> evaluated_input)> on_query;
  std::function<void(std::span<const double> perturbation)> on_batch;
};

/// Box for the increments of the selected lifted variables.
///
/// For variable v owning pixels P_v:
///   lower_v = max_{r in P_v} max(-eps - eta_r, l - x_r - eta_r)
///   upper_v = min_{r in P_v} min( eps - eta_r, u - x_r - eta_r)
/// An empty interval freezes the variable at 0. Intervals are widened to
/// contain 0 so rounding in earlier updates cannot exclude the current point.
inline BoxBounds batch_bounds(std::span<const double> x, std::span<const double> eta, double eps,
                              double lower, double upper, const LiftingOperator& lifting,
                              std::span<const std::size_t> variables) {
  if (x.size() != lifting.num_pixels() || eta.size() != x.size())
    throw DimensionError("image/perturbation/lifting size mismatch");
  BoxBounds box;
  box.lower.resize(variables.size());
  box.upper.resize(variables.size());
  for (std::size_t k = 0; k < variables.size(); ++k) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t r : lifting.pixels_of(variables[k])) {
      lo = std::max({lo, -eps - eta[r], lower - x[r] - eta[r]});
      hi = std::min({hi, eps - eta[r], upper - x[r] - eta[r]});
    }
    if (lo > hi) {
      lo = 0.0;
      hi = 0.0;
    }
    box.lower[k] = std::min(lo, 0.0);
    box.upper[k] = std::max(hi, 0.0);
  }
  return box;
}

/// eta += D * Omega * delta.
inline void add_level_perturbation(std::span<double> eta, const LiftingOperator& lifting,
                                   std::span<const double> delta,
                                   std::span<const std::size_t> variables) {
  if (delta.size() != variables.size()) throw DimensionError("delta/variable count mismatch");
  if (eta.size() != lifting.num_pixels()) throw DimensionError("perturbation/lifting mismatch");
  for (std::size_t k = 0; k < variables.size(); ++k) {
    if (delta[k] == 0.0) continue;
    for (std::size_t r : lifting.pixels_of(variables[k])) eta[r] += delta[k];
  }
}

/// First lifting for an input of shape `shape`.
inline LiftingOperator initial_lifting(const AttackConfig& cfg, const Shape& shape) {
  if (shape.size() > cfg.hierarchy_threshold)
    return LiftingOperator(shape, std::min(cfg.initial_grid_h, shape.height),
                           std::min(cfg.initial_grid_w, shape.width));
  return pixel_lifting(shape);
}

namespace detail {

/// Query bookkeeping shared by the attackers: budget, loss trace, early exit.
template <QueryOracle Oracle>
class AttackSession {
 public:
  AttackSession(Oracle& oracle, const InputTensor& x, std::size_t target, std::size_t max_queries,
                const AttackHooks& hooks)
      : oracle_(oracle), x_(x), target_(target), max_queries_(max_queries), hooks_(hooks),
        start_(oracle.queries_used()) {
    x.validate();
    if (!(x.shape == oracle.input_shape()))
      throw DimensionError("image shape " + to_string(x.shape) + " does not match the classifier input " +
                           to_string(oracle.input_shape()));
    if (target >= oracle.num_classes()) throw ConfigError("target class out of range");
  }

  [[nodiscard]] std::size_t used() const { return oracle_.queries_used() - start_; }
  [[nodiscard]] std::size_t budget_left() const {
    return std::min(oracle_.remaining(), max_queries_ - std::min(max_queries_, used()));
  }
  [[nodiscard]] double best_loss() const noexcept { return best_loss_; }

  /// Queries reproject(x + eta) and records the loss.
  Evaluation evaluate(std::span<const double> eta) {
    const Vector input = current_input(eta);
    if (hooks_.on_query) hooks_.on_query(input);
    const auto probs = oracle_.query(input);
    const double loss = adversarial_loss(probs, target_);
    best_loss_ = std::min(best_loss_, loss);
    trace_.push_back({used(), best_loss_});
    return {loss, is_adversarial(probs, target_)};
  }

  AttackResult finish(bool success, Vector eta) {
    AttackResult r;
    r.success = success;
    r.queries_used = used();
    r.loss_trace = std::move(trace_);
    if (success) {
      const Vector input = current_input(eta);
      r.verified = oracle_.verify_class(input) == target_;
    }
    r.perturbation = std::move(eta);
    return r;
  }

  [[nodiscard]] Vector current_input(std::span<const double> eta) const {
    Vector input(x_.data.size());
    for (std::size_t i = 0; i < input.size(); ++i)
      input[i] = std::clamp(x_.data[i] + eta[i], x_.lower, x_.upper);
    return input;
  }

  const AttackHooks& hooks() const noexcept { return hooks_; }

 private:
  Oracle& oracle_;
  const InputTensor& x_;
  std::size_t target_;
  std::size_t max_queries_;
  const AttackHooks& hooks_;
  std::size_t start_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::vector<LossPoint> trace_;
};

}  // namespace detail

/// Runs the attack until the target class is reached or the budget is spent.
///
/// The unperturbed input is queried first; if it already satisfies the
/// target the attack succeeds at one query. Every later query is checked for
/// success, so the attack stops on the first adversarial evaluation.
template <QueryOracle Oracle>
AttackResult run_attack(const AttackConfig& cfg, Oracle& oracle, const InputTensor& x,
                        std::size_t target, const AttackHooks& hooks = {}) {
  cfg.validate();
  detail::AttackSession<Oracle> session(oracle, x, target, cfg.max_queries, hooks);
  const std::size_t n = x.size();
  Vector eta(n, 0.0);

  if (session.budget_left() == 0) return session.finish(false, std::move(eta));
  const Evaluation initial = session.evaluate(eta);
  if (initial.halt) return session.finish(true, std::move(eta));
  double current_loss = initial.value;

  LiftingOperator lifting = initial_lifting(cfg, x.shape);
  BatchScheduler scheduler(cfg.strategy, cfg.batch_size, cfg.seed);
  std::vector<LevelRecord> levels{
      {lifting.level(), lifting.grid_h(), lifting.grid_w(), lifting.num_blocks(), session.used()}};
  std::size_t levels_completed = 0;
  std::size_t batches = 0;
  bool success = false;
  bool stalled = false;
  bool pixel_sweep_done = false;

  while (!success && session.budget_left() > 0) {
    const SamplingPlan plan = scheduler.next_sweep(lifting, session.current_input(eta));
    const std::size_t sweep_start = session.used();

    for (const auto& vars : plan.batches) {
      if (session.budget_left() == 0) break;
      const BoxBounds box = batch_bounds(x.data, eta, cfg.epsilon, x.lower, x.upper, lifting, vars);
      double widest = 0.0;
      for (std::size_t k = 0; k < box.size(); ++k) widest = std::max(widest, box.upper[k] - box.lower[k]);
      if (widest == 0.0) continue;

      BatchOptions opts;
      opts.kind = cfg.model_kind;
      opts.max_evaluations = cfg.kappa();
      opts.initial_radius = cfg.trust_radius_fraction * widest;
      opts.shrink_factor = cfg.shrink_factor;
      opts.min_radius_ratio = cfg.min_radius_ratio;
      opts.center_value = current_loss;

      Vector trial(n);
      auto objective = [&](std::span<const double> delta) -> Evaluation {
        trial = eta;
        add_level_perturbation(trial, lifting, delta, vars);
        return session.evaluate(trial);
      };
      const Vector start(vars.size(), 0.0);
      const BatchResult r = minimize_batch(objective, start, box, opts, session.budget_left());
      ++batches;
      if (r.evaluations > 0) {
        add_level_perturbation(eta, lifting, r.halted ? r.halt_point : r.best_point, vars);
        current_loss = r.best_value;
      }
      if (hooks.on_batch) hooks.on_batch(eta);
      if (r.halted) {
        success = true;
        break;
      }
    }
    if (success) break;
    if (session.used() == sweep_start) {
      stalled = true;
      break;
    }
    if (session.budget_left() == 0) break;
    if (!lifting.is_pixel_level()) {
      ++levels_completed;
      lifting = refine_level(lifting, x.shape);
      levels.push_back({lifting.level(), lifting.grid_h(), lifting.grid_w(), lifting.num_blocks(),
                        session.used()});
    } else if (!pixel_sweep_done) {
      ++levels_completed;
      pixel_sweep_done = true;
    }
  }

  AttackResult result = session.finish(success, std::move(eta));
  result.levels_completed = levels_completed;
  result.levels = std::move(levels);
  result.batches = batches;
  result.stalled = stalled;
  return result;
}

}  // namespace bbdfo
