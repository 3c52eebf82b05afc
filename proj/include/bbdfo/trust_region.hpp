#pragma once

// Box-constrained model-based derivative-free minimization.
//
// Interpolation models
//     m(center + p) = a + g.p + 1/2 sum_i M_ii p_i^2
// are fitted to q sampled values (q = b+1 for linear models, q = 2b+1 for
// diagonal quadratics), minimized over the intersection of an infinity-norm
// trust region with the box, and refitted after every evaluation. Coordinates
// whose box interval is a single point are frozen: they take no samples and
// their steps are always zero, so q counts free coordinates only.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bbdfo/errors.hpp"
#include "bbdfo/vector.hpp"

namespace bbdfo {

enum class ModelKind { linear, diag_quadratic };

struct BoxBounds {
  Vector lower;
  Vector upper;

  BoxBounds() = default;
  BoxBounds(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) { validate(); }

  [[nodiscard]] std::size_t size() const noexcept { return lower.size(); }
  [[nodiscard]] bool frozen(std::size_t i) const noexcept { return lower[i] == upper[i]; }

  [[nodiscard]] bool contains(std::span<const double> x) const noexcept {
    if (x.size() != size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }

  /// Indices of non-degenerate coordinates.
  [[nodiscard]] std::vector<std::size_t> free_coordinates() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (!frozen(i)) out.push_back(i);
    return out;
  }

  void clamp(std::span<double> x) const noexcept {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
  }

  void validate() const {
    if (lower.size() != upper.size()) throw DimensionError("box lower/upper length mismatch");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
        throw ConfigError("box bounds must be finite");
      if (lower[i] > upper[i])
        throw ConfigError("box coordinate " + std::to_string(i) + " has lower > upper");
    }
  }
};

struct TrustRegion {
  double radius = 1.0;
  double shrink_factor = 0.5;
  double min_radius = 1e-4;

  void validate() const {
    if (!(radius > 0.0)) throw ConfigError("trust radius must be positive");
    if (!(shrink_factor > 0.0 && shrink_factor < 1.0))
      throw ConfigError("shrink factor must lie in (0, 1)");
    if (!(min_radius > 0.0)) throw ConfigError("minimum trust radius must be positive");
  }
};

/// Interpolation points and their objective values.
struct SampleSet {
  std::vector<Vector> points;
  Vector values;                      ///< Empty until evaluated.
  std::vector<std::size_t> active;    ///< Free coordinates the points span.

  [[nodiscard]] std::size_t q() const noexcept { return points.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return points.empty() ? 0 : points[0].size(); }

  /// Lowest-valued sample, ties to the lowest index.
  [[nodiscard]] std::size_t best_index() const {
    if (values.size() != points.size() || values.empty())
      throw DimensionError("sample set values are not filled");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] < values[best]) best = i;
    return best;
  }
};

struct SurrogateModel {
  double a = 0.0;
  Vector g;
  Vector m_diag;
  Vector center;

  [[nodiscard]] std::size_t dim() const noexcept { return g.size(); }

  /// m(center + p).
  [[nodiscard]] double predict_step(std::span<const double> p) const {
    double v = a;
    for (std::size_t i = 0; i < p.size(); ++i) v += g[i] * p[i] + 0.5 * m_diag[i] * p[i] * p[i];
    return v;
  }
  /// m(y).
  [[nodiscard]] double predict(std::span<const double> y) const {
    Vector p(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) p[i] = y[i] - center[i];
    return predict_step(p);
  }
  [[nodiscard]] bool is_linear() const noexcept {
    return std::all_of(m_diag.begin(), m_diag.end(), [](double m) { return m == 0.0; });
  }
};

namespace detail {

inline std::size_t required_q(ModelKind kind, std::size_t free_dim) {
  return kind == ModelKind::linear ? free_dim + 1 : 2 * free_dim + 1;
}

/// Rows [1, d_active, (1/2 d_active^2)] with d = y - center.
inline Eigen::MatrixXd interpolation_matrix(const std::vector<Vector>& points,
                                            std::span<const double> center,
                                            const std::vector<std::size_t>& active,
                                            bool with_curvature) {
  const auto b = static_cast<Eigen::Index>(active.size());
  const auto cols = 1 + b + (with_curvature ? b : 0);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(points.size()), cols);
  for (std::size_t r = 0; r < points.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    A(row, 0) = 1.0;
    for (Eigen::Index k = 0; k < b; ++k) {
      const std::size_t i = active[static_cast<std::size_t>(k)];
      const double d = points[r][i] - center[i];
      A(row, 1 + k) = d;
      if (with_curvature) A(row, 1 + b + k) = 0.5 * d * d;
    }
  }
  return A;
}

inline void check_samples(const SampleSet& s) {
  if (s.points.empty()) throw DimensionError("empty sample set");
  if (s.values.size() != s.points.size()) throw DimensionError("sample values are not filled");
  for (const auto& p : s.points)
    if (p.size() != s.dim()) throw DimensionError("sample points differ in length");
  for (std::size_t i : s.active)
    if (i >= s.dim()) throw DimensionError("active coordinate out of range");
}

inline void check_interpolation(const SurrogateModel& m, const SampleSet& s) {
  for (std::size_t i = 0; i < s.q(); ++i) {
    const double err = std::abs(m.predict(s.points[i]) - s.values[i]);
    if (!(err <= 1e-9 * (1.0 + std::abs(s.values[i]))))
      throw SingularSystem("interpolation system is ill-conditioned (residual " +
                           std::to_string(err) + ")");
  }
}

inline SurrogateModel fit_square(const SampleSet& s, ModelKind kind) {
  check_samples(s);
  const std::size_t need = required_q(kind, s.active.size());
  if (s.q() != need)
    throw DimensionError("model needs q = " + std::to_string(need) + " samples, got " +
                         std::to_string(s.q()));
  const std::size_t c = s.best_index();
  const Vector& center = s.points[c];
  const bool quad = kind == ModelKind::diag_quadratic;
  const Eigen::MatrixXd A = interpolation_matrix(s.points, center, s.active, quad);
  const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(s.values.data(),
                                                                static_cast<Eigen::Index>(s.q()));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw SingularSystem("interpolation points are not poised");
  const Eigen::VectorXd theta = lu.solve(rhs);

  SurrogateModel m;
  m.center = center;
  m.g.assign(s.dim(), 0.0);
  m.m_diag.assign(s.dim(), 0.0);
  m.a = theta(0);
  const auto b = static_cast<Eigen::Index>(s.active.size());
  for (Eigen::Index k = 0; k < b; ++k) {
    const std::size_t i = s.active[static_cast<std::size_t>(k)];
    m.g[i] = theta(1 + k);
    if (quad) m.m_diag[i] = theta(1 + b + k);
  }
  check_interpolation(m, s);
  return m;
}

}  // namespace detail

/// Initial interpolation set around `center`.
///
/// Linear: center plus center + delta*e_i per free coordinate, flipped to
/// center - delta*e_i when the forward step would leave the box (and
/// shortened to the larger room when both directions would).
/// Diagonal quadratic: center plus center +/- delta*e_i clipped into the box;
/// if one side has no room, both extra points go to the other side at
/// distances s and s/2.
inline SampleSet build_initial_samples(std::span<const double> center, const BoxBounds& box,
                                       ModelKind kind, double delta) {
  if (center.size() != box.size()) throw DimensionError("center/box length mismatch");
  if (!box.contains(center)) throw ConfigError("center lies outside the box");
  if (!(delta > 0.0)) throw ConfigError("sampling radius must be positive");

  SampleSet s;
  s.active = box.free_coordinates();
  if (s.active.empty()) throw ConfigError("box is degenerate in every coordinate");

  const Vector c(center.begin(), center.end());
  s.points.push_back(c);
  auto push_offset = [&](std::size_t i, double step) {
    Vector y = c;
    y[i] = std::clamp(c[i] + step, box.lower[i], box.upper[i]);
    s.points.push_back(std::move(y));
  };

  for (std::size_t i : s.active) {
    const double up = box.upper[i] - c[i];
    const double down = c[i] - box.lower[i];
    if (kind == ModelKind::linear) {
      if (up >= delta)
        push_offset(i, delta);
      else if (down >= delta)
        push_offset(i, -delta);
      else if (up >= down)
        push_offset(i, up);
      else
        push_offset(i, -down);
    } else {
      const double sp = std::min(delta, up);
      const double sm = std::min(delta, down);
      if (sp > 0.0 && sm > 0.0) {
        push_offset(i, sp);
        push_offset(i, -sm);
      } else if (sp > 0.0) {
        push_offset(i, sp);
        push_offset(i, 0.5 * sp);
      } else {
        push_offset(i, -sm);
        push_offset(i, -0.5 * sm);
      }
    }
  }
  return s;
}

/// Overload taking q explicitly: q = b+1 selects a linear model, q = 2b+1 a
/// diagonal quadratic (b = full box dimension).
inline SampleSet build_initial_samples(std::span<const double> center, const BoxBounds& box,
                                       std::size_t q, double delta) {
  const std::size_t b = box.size();
  if (q == b + 1) return build_initial_samples(center, box, ModelKind::linear, delta);
  if (q == 2 * b + 1) return build_initial_samples(center, box, ModelKind::diag_quadratic, delta);
  throw ConfigError("q must be b+1 or 2b+1");
}

/// Linear interpolation model centred at the best sample; requires q = b+1.
inline SurrogateModel fit_linear_model(const SampleSet& samples) {
  return detail::fit_square(samples, ModelKind::linear);
}

/// Diagonal quadratic interpolation model; requires q = 2b+1.
inline SurrogateModel fit_diag_quadratic_model(const SampleSet& samples) {
  return detail::fit_square(samples, ModelKind::diag_quadratic);
}

/// Least-change update: among diagonal models interpolating `samples`, the
/// one minimizing ||M - prev.M||^2 over the free coordinates. The model is
/// recentred at the best sample. Solved through the KKT system
///
///   [ 2I  0   Q^T ] [dM]   [0]
///   [ 0   0   A^T ] [th] = [0]
///   [ Q   A   0   ] [la]   [r]
///
/// with A = [1, d], Q = 1/2 d^2 and r the values minus prev's curvature term.
inline SurrogateModel min_frobenius_update(const SurrogateModel& prev, const SampleSet& samples) {
  detail::check_samples(samples);
  if (prev.m_diag.size() != samples.dim()) throw DimensionError("model/sample dimension mismatch");
  const std::size_t bf = samples.active.size();
  if (samples.q() < bf + 1 || samples.q() > 2 * bf + 1)
    throw DimensionError("least-change update needs b+1 <= q <= 2b+1 samples");

  const std::size_t c = samples.best_index();
  const Vector& center = samples.points[c];
  const Eigen::MatrixXd full = detail::interpolation_matrix(samples.points, center, samples.active, true);
  const auto q = static_cast<Eigen::Index>(samples.q());
  const auto b = static_cast<Eigen::Index>(bf);
  const Eigen::MatrixXd A = full.leftCols(1 + b);
  const Eigen::MatrixXd Q = full.rightCols(b);

  Eigen::FullPivLU<Eigen::MatrixXd> alu(A);
  if (alu.rank() != 1 + b) throw SingularSystem("sample points are affinely dependent");

  Eigen::VectorXd m_prev(b);
  for (Eigen::Index k = 0; k < b; ++k) m_prev(k) = prev.m_diag[samples.active[static_cast<std::size_t>(k)]];
  Eigen::VectorXd r(q);
  for (Eigen::Index i = 0; i < q; ++i) r(i) = samples.values[static_cast<std::size_t>(i)];
  r -= Q * m_prev;

  const Eigen::Index n = b + (1 + b) + q;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  K.topLeftCorner(b, b) = 2.0 * Eigen::MatrixXd::Identity(b, b);
  K.block(0, 2 * b + 1, b, q) = Q.transpose();
  K.block(b, 2 * b + 1, 1 + b, q) = A.transpose();
  K.block(2 * b + 1, 0, q, b) = Q;
  K.block(2 * b + 1, b, q, 1 + b) = A;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs.tail(q) = r;

  const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);

  SurrogateModel m;
  m.center = center;
  m.g.assign(samples.dim(), 0.0);
  m.m_diag = prev.m_diag;
  m.a = sol(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const std::size_t i = samples.active[static_cast<std::size_t>(k)];
    m.m_diag[i] = m_prev(k) + sol(k);
    m.g[i] = sol(b + 1 + k);
  }
  detail::check_interpolation(m, samples);
  return m;
}

/// Minimizer of the model over {p : |p_i| <= radius, center + p in box}.
/// Each coordinate is independent under the infinity norm, so the problem
/// splits into 1-D quadratics over intervals. Zero is preferred on ties.
inline Vector solve_subproblem(const SurrogateModel& model, const TrustRegion& tr,
                               const BoxBounds& box) {
  const std::size_t b = model.dim();
  if (box.size() != b || model.center.size() != b || model.m_diag.size() != b)
    throw DimensionError("model/box dimension mismatch");
  Vector p(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const double lo = std::min(0.0, std::max(box.lower[i] - model.center[i], -tr.radius));
    const double hi = std::max(0.0, std::min(box.upper[i] - model.center[i], tr.radius));
    const double gi = model.g[i];
    const double mi = model.m_diag[i];
    auto value = [&](double s) { return gi * s + 0.5 * mi * s * s; };
    double best = 0.0;
    double best_val = 0.0;
    auto consider = [&](double s) {
      const double v = value(s);
      if (v < best_val) {
        best = s;
        best_val = v;
      }
    };
    consider(lo);
    consider(hi);
    if (mi > 0.0) consider(std::clamp(-gi / mi, lo, hi));
    p[i] = best;
  }
  return p;
}

/// One objective evaluation; `halt` stops the batch immediately.
struct Evaluation {
  double value = 0.0;
  bool halt = false;
};

struct BatchOptions {
  ModelKind kind = ModelKind::linear;
  std::size_t max_evaluations = 56;  ///< kappa, model-building samples included
  double initial_radius = 1.0;
  double shrink_factor = 0.5;
  double min_radius_ratio = 1e-4;   ///< min radius as a fraction of initial_radius
  std::optional<double> center_value;  ///< known objective at the center; skips that evaluation
};

struct BatchResult {
  Vector best_point;
  double best_value = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  bool truncated = false;  ///< stopped by the global query budget
  bool halted = false;     ///< the objective requested a stop
  Vector halt_point;       ///< the point whose evaluation requested the stop
  std::vector<double> best_trace;  ///< best value after each evaluation
};

namespace detail {

template <class Objective>
Evaluation evaluate(Objective& f, std::span<const double> x) {
  using R = std::invoke_result_t<Objective&, std::span<const double>>;
  if constexpr (std::is_same_v<std::remove_cvref_t<R>, Evaluation>) {
    return f(x);
  } else {
    return Evaluation{static_cast<double>(f(x)), false};
  }
}

inline bool poised(const std::vector<Vector>& points, std::span<const double> center,
                   const std::vector<std::size_t>& active, ModelKind kind) {
  const Eigen::MatrixXd A =
      interpolation_matrix(points, center, active, kind == ModelKind::diag_quadratic);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  return lu.rank() == std::min(A.rows(), A.cols());
}

}  // namespace detail

template <class Objective>
concept BatchObjective = std::invocable<Objective&, std::span<const double>> &&
    (std::convertible_to<std::invoke_result_t<Objective&, std::span<const double>>, double> ||
     std::same_as<std::remove_cvref_t<std::invoke_result_t<Objective&, std::span<const double>>>,
                  Evaluation>);

/// Minimizes `objective` over `box` starting from `center`.
///
/// Spends at most min(max_evaluations, global_remaining) evaluations. Each
/// iteration fits a model to the current sample set, solves the trust-region
/// subproblem, evaluates the step, and swaps the new point in for the worst
/// sample whose removal keeps the set poised. Unimproved steps halve the
/// radius. Returns the best evaluated point. If every coordinate is frozen no
/// evaluation is made and best_value stays +inf. A supplied center_value
/// stands in for the center's evaluation and is not counted.
template <BatchObjective Objective>
BatchResult minimize_batch(Objective&& objective, std::span<const double> center,
                           const BoxBounds& box, const BatchOptions& opts,
                           std::size_t global_remaining = std::numeric_limits<std::size_t>::max()) {
  if (center.size() != box.size()) throw DimensionError("center/box length mismatch");
  if (!box.contains(center)) throw ConfigError("center lies outside the box");
  TrustRegion tr{opts.initial_radius, opts.shrink_factor, opts.initial_radius * opts.min_radius_ratio};
  tr.validate();

  BatchResult res;
  res.best_point.assign(center.begin(), center.end());
  if (box.free_coordinates().empty()) return res;

  const std::size_t q = detail::required_q(opts.kind, box.free_coordinates().size());
  if (opts.max_evaluations < q)
    throw ConfigError("per-batch query cap " + std::to_string(opts.max_evaluations) +
                      " is below the " + std::to_string(q) + " samples the model needs");
  const std::size_t limit = std::min(opts.max_evaluations, global_remaining);
  const bool global_bound = global_remaining < opts.max_evaluations;

  auto eval_point = [&](const Vector& x) -> Evaluation {
    const Evaluation e = detail::evaluate(objective, std::span<const double>(x));
    ++res.evaluations;
    if (e.value < res.best_value) {
      res.best_value = e.value;
      res.best_point = x;
    }
    res.best_trace.push_back(res.best_value);
    if (e.halt) {
      res.halted = true;
      res.halt_point = x;
    }
    return e;
  };

  SampleSet samples = build_initial_samples(center, box, opts.kind, tr.radius);
  std::size_t first = 0;
  if (opts.center_value) {
    res.best_value = *opts.center_value;
    samples.values.push_back(*opts.center_value);
    first = 1;
  }
  for (std::size_t k = first; k < samples.q(); ++k) {
    const Vector& y = samples.points[k];
    if (res.evaluations >= limit) {
      res.truncated = global_bound;
      return res;
    }
    samples.values.push_back(eval_point(y).value);
    if (res.halted) return res;
  }

  SurrogateModel model;
  bool have_model = false;
  while (res.evaluations < limit) {
    try {
      if (opts.kind == ModelKind::linear)
        model = fit_linear_model(samples);
      else
        model = have_model ? min_frobenius_update(model, samples) : fit_diag_quadratic_model(samples);
      have_model = true;
    } catch (const SingularSystem&) {
      break;
    }

    const Vector p = solve_subproblem(model, tr, box);
    if (std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; })) break;

    Vector x = model.center;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += p[i];
    box.clamp(x);

    const bool duplicate = std::any_of(samples.points.begin(), samples.points.end(),
                                       [&](const Vector& y) { return y == x; });
    if (duplicate) {
      tr.radius *= tr.shrink_factor;
      if (tr.radius < tr.min_radius) break;
      continue;
    }

    const double prev_best = res.best_value;
    const Evaluation e = eval_point(x);
    if (res.halted) return res;

    // Swap x in for the worst sample that keeps the set poised.
    const std::size_t keep = samples.best_index();
    std::vector<std::size_t> order(samples.q());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return samples.values[i] > samples.values[j];
    });
    bool replaced = false;
    for (std::size_t idx : order) {
      if (idx == keep && e.value >= samples.values[keep]) continue;
      std::vector<Vector> trial = samples.points;
      trial[idx] = x;
      const std::span<const double> trial_center =
          e.value < samples.values[keep] ? std::span<const double>(x)
                                         : std::span<const double>(samples.points[keep]);
      if (detail::poised(trial, trial_center, samples.active, opts.kind)) {
        samples.points[idx] = x;
        samples.values[idx] = e.value;
        replaced = true;
        break;
      }
    }
    if (!replaced) break;

    if (!(e.value < prev_best)) {
      tr.radius *= tr.shrink_factor;
      if (tr.radius < tr.min_radius) break;
    }
  }
  if (res.evaluations >= limit && global_bound) res.truncated = true;
  return res;
}

}  // namespace bbdfo
