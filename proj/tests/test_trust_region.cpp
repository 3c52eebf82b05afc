#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "test_support.hpp"

using namespace bbdfo;
using bbdfo::testing::gauss_solve;

namespace {

BoxBounds cube(std::size_t b, double lo, double hi) {
  return BoxBounds(Vector(b, lo), Vector(b, hi));
}

SampleSet with_values(SampleSet s, auto&& f) {
  s.values.clear();
  for (const auto& p : s.points) s.values.push_back(f(p));
  return s;
}

}  // namespace

TEST(InitialSamples, LinearForwardSteps) {
  const Vector c{0.0, 0.0, 0.0};
  const auto s = build_initial_samples(c, cube(3, -1, 1), ModelKind::linear, 0.3);
  ASSERT_EQ(s.q(), 4u);
  EXPECT_EQ(s.points[0], c);
  for (std::size_t i = 0; i < 3; ++i) {
    Vector e(3, 0.0);
    e[i] = 0.3;
    EXPECT_EQ(s.points[i + 1], e);
  }
}

TEST(InitialSamples, LinearFlipsAtUpperFaceAndShortensInNarrowBox) {
  const Vector c{1.0, 0.05};
  const BoxBounds box({-1.0, 0.0}, {1.0, 0.1});
  const auto s = build_initial_samples(c, box, ModelKind::linear, 0.3);
  ASSERT_EQ(s.q(), 3u);
  EXPECT_DOUBLE_EQ(s.points[1][0], 0.7);
  EXPECT_DOUBLE_EQ(s.points[1][1], 0.05);
  EXPECT_DOUBLE_EQ(s.points[2][0], 1.0);
  EXPECT_NEAR(s.points[2][1], 0.1, 1e-15);
}

TEST(InitialSamples, QuadraticSymmetricClippedAndOneSided) {
  const Vector c{0.0, 0.9, 1.0};
  const auto s = build_initial_samples(c, cube(3, -1, 1), ModelKind::diag_quadratic, 0.3);
  ASSERT_EQ(s.q(), 7u);
  EXPECT_DOUBLE_EQ(s.points[1][0], 0.3);
  EXPECT_DOUBLE_EQ(s.points[2][0], -0.3);
  EXPECT_NEAR(s.points[3][1], 1.0, 1e-15);
  EXPECT_NEAR(s.points[4][1], 0.6, 1e-15);
  EXPECT_NEAR(s.points[5][2], 0.7, 1e-15);
  EXPECT_NEAR(s.points[6][2], 0.85, 1e-15);
}

TEST(InitialSamples, ExplicitQSelectsKindAndSkipsFrozen) {
  const Vector c{0.0, 0.0};
  EXPECT_EQ(build_initial_samples(c, cube(2, -1, 1), std::size_t{3}, 0.1).q(), 3u);
  EXPECT_EQ(build_initial_samples(c, cube(2, -1, 1), std::size_t{5}, 0.1).q(), 5u);
  EXPECT_THROW(build_initial_samples(c, cube(2, -1, 1), std::size_t{4}, 0.1), ConfigError);

  const BoxBounds partly({-1.0, 0.0}, {1.0, 0.0});
  const auto s = build_initial_samples(c, partly, ModelKind::linear, 0.1);
  EXPECT_EQ(s.q(), 2u);
  EXPECT_EQ(s.active, std::vector<std::size_t>{0});
  EXPECT_THROW(build_initial_samples(c, cube(2, 0, 0), ModelKind::linear, 0.1), ConfigError);
  EXPECT_THROW(build_initial_samples(Vector{2.0, 0.0}, cube(2, -1, 1), ModelKind::linear, 0.1),
               ConfigError);
}

TEST(ModelFit, LinearHandExample) {
  SampleSet s;
  s.points = {{0, 0}, {1, 0}, {0, 1}};
  s.values = {1, 2, 3};
  s.active = {0, 1};
  const auto m = fit_linear_model(s);
  EXPECT_NEAR(m.a, 1.0, 1e-12);
  EXPECT_NEAR(m.g[0], 1.0, 1e-12);
  EXPECT_NEAR(m.g[1], 2.0, 1e-12);
  EXPECT_TRUE(m.is_linear());
}

TEST(ModelFit, LinearRecoversRandomAffineFunctions) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + static_cast<std::size_t>(trial % 12);
    Vector w(b);
    for (double& v : w) v = nd(rng);
    const double c0 = nd(rng);
    auto f = [&](const Vector& x) {
      double v = c0;
      for (std::size_t i = 0; i < b; ++i) v += w[i] * x[i];
      return v;
    };
    Vector center(b);
    for (double& v : center) v = 0.2 * nd(rng);
    const auto s = with_values(build_initial_samples(center, cube(b, -2, 2), ModelKind::linear, 0.1), f);
    const auto m = fit_linear_model(s);
    for (std::size_t i = 0; i < b; ++i) EXPECT_NEAR(m.g[i], w[i], 1e-8);
    for (const auto& p : s.points) EXPECT_NEAR(m.predict(p), f(p), 1e-9);
  }
}

TEST(ModelFit, DiagonalQuadraticRecoversCurvature) {
  // f(x) = sum_i d_i x_i^2 has diagonal Hessian 2 d_i.
  const Vector d{0.5, 2.0, -1.0, 3.0};
  auto f = [&](const Vector& x) {
    double v = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) v += d[i] * x[i] * x[i];
    return v;
  };
  const Vector c{0.1, -0.2, 0.3, 0.0};
  const auto s = with_values(build_initial_samples(c, cube(4, -1, 1), ModelKind::diag_quadratic, 0.25), f);
  const auto m = fit_diag_quadratic_model(s);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(m.m_diag[i], 2.0 * d[i], 1e-8);
  const Vector probe{0.4, 0.4, -0.4, 0.2};
  EXPECT_NEAR(m.predict(probe), f(probe), 1e-8);
}

TEST(ModelFit, WrongSampleCountAndDegeneratePoints) {
  SampleSet s;
  s.points = {{0, 0}, {1, 0}};
  s.values = {0, 1};
  s.active = {0, 1};
  EXPECT_THROW(fit_linear_model(s), DimensionError);
  s.points = {{0, 0}, {1, 0}, {2, 0}};
  s.values = {0, 1, 2};
  EXPECT_THROW(fit_linear_model(s), SingularSystem);
}

namespace {

// Closed-form least-change update for b = 2 and q = 4 derived by hand: the
// single left null vector n of [1, d] removes the affine part, leaving one
// scalar constraint (n^T Q) dM = n^T r on the curvature change.
Vector least_change_oracle(const std::vector<Vector>& pts, const Vector& vals, const Vector& m_prev,
                           std::size_t center_idx) {
  std::vector<Vector> d;
  for (const auto& p : pts) d.push_back({p[0] - pts[center_idx][0], p[1] - pts[center_idx][1]});
  // Solve sum n_j = 0, sum n_j d_j = 0 with n_3 = 1.
  bbdfo::testing::Matrix a{{1, 1, 1}, {d[0][0], d[1][0], d[2][0]}, {d[0][1], d[1][1], d[2][1]}};
  const auto head = gauss_solve(a, {-1.0, -d[3][0], -d[3][1]});
  const Vector n{head[0], head[1], head[2], 1.0};
  double bx = 0, by = 0, rhs = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double qx = 0.5 * d[j][0] * d[j][0];
    const double qy = 0.5 * d[j][1] * d[j][1];
    bx += n[j] * qx;
    by += n[j] * qy;
    rhs += n[j] * (vals[j] - qx * m_prev[0] - qy * m_prev[1]);
  }
  const double scale = rhs / (bx * bx + by * by);
  return {m_prev[0] + scale * bx, m_prev[1] + scale * by};
}

}  // namespace

TEST(LeastChangeUpdate, MatchesClosedFormOnFourPoints) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 40; ++trial) {
    SampleSet s;
    s.points = {{0, 0}, {0.5, 0}, {0, 0.5}, {u(rng), u(rng)}};
    s.active = {0, 1};
    s.values = {-1.0, u(rng), u(rng), u(rng)};  // best sample is point 0
    SurrogateModel prev;
    prev.center = {0, 0};
    prev.g = {0, 0};
    prev.m_diag = {u(rng), u(rng)};
    const auto m = min_frobenius_update(prev, s);
    const auto expect = least_change_oracle(s.points, s.values, prev.m_diag, 0);
    EXPECT_NEAR(m.m_diag[0], expect[0], 1e-8);
    EXPECT_NEAR(m.m_diag[1], expect[1], 1e-8);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(m.predict(s.points[j]), s.values[j], 1e-9);
  }
}

TEST(LeastChangeUpdate, SquareCasesReduceToPlainFits) {
  // q = b+1: curvature untouched. q = 2b+1: unique interpolant.
  SampleSet lin;
  lin.points = {{0, 0}, {1, 0}, {0, 1}};
  lin.values = {1, 2, 3};
  lin.active = {0, 1};
  SurrogateModel prev{0.0, {0, 0}, {0.7, -0.3}, {0, 0}};
  const auto m = min_frobenius_update(prev, lin);
  EXPECT_DOUBLE_EQ(m.m_diag[0], 0.7);
  EXPECT_DOUBLE_EQ(m.m_diag[1], -0.3);

  auto f = [](const Vector& x) { return 1.0 + x[0] - 2.0 * x[1] + 1.5 * x[0] * x[0] + 0.25 * x[1] * x[1]; };
  const auto quad = with_values(build_initial_samples(Vector{0, 0}, cube(2, -1, 1), ModelKind::diag_quadratic, 0.4), f);
  const auto plain = fit_diag_quadratic_model(quad);
  const auto updated = min_frobenius_update(prev, quad);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(updated.m_diag[i], plain.m_diag[i], 1e-8);
    EXPECT_NEAR(updated.g[i], plain.g[i], 1e-8);
  }
}

TEST(Subproblem, LinearModelGoesToRadiusCorners) {
  SurrogateModel m{0.0, {1.0, -2.0}, {0.0, 0.0}, {0.0, 0.0}};
  const auto p = solve_subproblem(m, TrustRegion{0.3}, cube(2, -1, 1));
  EXPECT_DOUBLE_EQ(p[0], -0.3);
  EXPECT_DOUBLE_EQ(p[1], 0.3);
}

TEST(Subproblem, BoxCutsRadiusAndZeroGradientStays) {
  SurrogateModel m{0.0, {1.0, -2.0, 0.0}, {0.0, 0.0, 0.0}, {-0.9, 0.0, 0.0}};
  const auto p = solve_subproblem(m, TrustRegion{0.3}, cube(3, -1, 1));
  EXPECT_NEAR(p[0], -0.1, 1e-15);
  EXPECT_DOUBLE_EQ(p[1], 0.3);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Subproblem, ConvexCoordinateStopsAtVertex) {
  // 0.5*4*p^2 - 1*p has its minimum at p = 0.25.
  SurrogateModel m{0.0, {-1.0}, {4.0}, {0.0}};
  EXPECT_NEAR(solve_subproblem(m, TrustRegion{1.0}, cube(1, -1, 1))[0], 0.25, 1e-15);
  EXPECT_NEAR(solve_subproblem(m, TrustRegion{0.1}, cube(1, -1, 1))[0], 0.1, 1e-15);
}

TEST(Subproblem, NeverWorseThanGridSearch) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t b = 3;
    SurrogateModel m;
    m.a = 0.0;
    m.g = {nd(rng), nd(rng), nd(rng)};
    m.m_diag = {3 * nd(rng), 3 * nd(rng), 3 * nd(rng)};
    m.center = {u(rng), u(rng), u(rng)};
    const double radius = 0.05 + std::abs(nd(rng)) * 0.5;
    const auto box = cube(b, -1, 1);
    const auto p = solve_subproblem(m, TrustRegion{radius}, box);
    double grid_best = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      EXPECT_LE(std::abs(p[i]), radius + 1e-15);
      EXPECT_TRUE(m.center[i] + p[i] >= -1 - 1e-15 && m.center[i] + p[i] <= 1 + 1e-15);
      const double lo = std::max(-radius, -1 - m.center[i]);
      const double hi = std::min(radius, 1 - m.center[i]);
      double best_i = 0.0;
      for (int k = 0; k <= 2000; ++k) {
        const double s = lo + (hi - lo) * k / 2000.0;
        best_i = std::min(best_i, m.g[i] * s + 0.5 * m.m_diag[i] * s * s);
      }
      grid_best += best_i;
    }
    EXPECT_LE(m.predict_step(p), grid_best + 1e-12);
  }
}

TEST(MinimizeBatch, AffineObjectiveReachesVertexQuickly) {
  const std::size_t b = 6;
  const Vector w{1.0, -2.0, 0.5, -0.1, 3.0, -0.7};
  auto f = [&](std::span<const double> x) {
    double v = 0.2;
    for (std::size_t i = 0; i < b; ++i) v += w[i] * x[i];
    return v;
  };
  double vertex = 0.2;
  for (double wi : w) vertex -= std::abs(wi);
  BatchOptions opts;
  opts.initial_radius = 1.0;
  opts.max_evaluations = 100;
  const auto r = minimize_batch(f, Vector(b, 0.0), cube(b, -1, 1), opts);
  EXPECT_NEAR(r.best_value, vertex, 1e-12);
  EXPECT_LE(r.evaluations, b + 1 + 5);
}

TEST(MinimizeBatch, ConstantObjectiveStopsAfterSampling) {
  std::size_t calls = 0;
  auto f = [&](std::span<const double>) {
    ++calls;
    return 4.0;
  };
  BatchOptions opts;
  opts.initial_radius = 0.2;
  const auto r = minimize_batch(f, Vector(5, 0.0), cube(5, -1, 1), opts);
  EXPECT_EQ(calls, 6u);
  EXPECT_EQ(r.evaluations, 6u);
  EXPECT_EQ(r.best_value, 4.0);
  EXPECT_EQ(r.best_point, Vector(5, 0.0));
}

TEST(MinimizeBatch, ConvexQuadraticConverges) {
  const std::size_t b = 5;
  const Vector target{0.3, -0.6, 0.1, 0.8, -0.2};
  const Vector curv{1.0, 4.0, 0.5, 2.0, 8.0};
  auto f = [&](std::span<const double> x) {
    double v = 0.0;
    for (std::size_t i = 0; i < b; ++i) v += curv[i] * (x[i] - target[i]) * (x[i] - target[i]);
    return v;
  };
  BatchOptions opts;
  opts.kind = ModelKind::diag_quadratic;
  opts.initial_radius = 1.0 / 3.0;
  opts.max_evaluations = 2 * b + 1 + 20;
  const auto r = minimize_batch(f, Vector(b, 0.0), cube(b, -1, 1), opts);
  for (std::size_t i = 0; i < b; ++i) EXPECT_NEAR(r.best_point[i], target[i], 1e-2) << "i=" << i;

  // Linear models only see curvature through radius shrinking; ask for a
  // large decrease rather than convergence.
  opts.kind = ModelKind::linear;
  opts.max_evaluations = 200;
  const auto lin = minimize_batch(f, Vector(b, 0.0), cube(b, -1, 1), opts);
  EXPECT_LT(lin.best_value, 0.1 * f(Vector(b, 0.0)));
}

TEST(MinimizeBatch, RespectsCapsAndFlagsGlobalTruncation) {
  auto f = [](std::span<const double> x) { return x[0] - x[1]; };
  BatchOptions opts;
  opts.max_evaluations = 8;
  auto r = minimize_batch(f, Vector{0, 0}, cube(2, -1, 1), opts, 2);
  EXPECT_EQ(r.evaluations, 2u);
  EXPECT_TRUE(r.truncated);
  r = minimize_batch(f, Vector{0, 0}, cube(2, -1, 1), opts, 100);
  EXPECT_LE(r.evaluations, 8u);
  EXPECT_FALSE(r.truncated);
  opts.max_evaluations = 2;
  EXPECT_THROW(minimize_batch(f, Vector{0, 0}, cube(2, -1, 1), opts), ConfigError);
}

TEST(MinimizeBatch, HaltStopsImmediately) {
  std::size_t calls = 0;
  auto f = [&](std::span<const double> x) {
    ++calls;
    return Evaluation{x[0], x[0] < -0.05};
  };
  BatchOptions opts;
  opts.initial_radius = 0.1;
  const auto r = minimize_batch(f, Vector{0, 0, 0}, cube(3, -1, 1), opts);
  EXPECT_TRUE(r.halted);
  EXPECT_EQ(r.evaluations, calls);
  EXPECT_LT(r.halt_point[0], -0.05);
}

TEST(MinimizeBatch, AllFrozenMakesNoEvaluation) {
  std::size_t calls = 0;
  auto f = [&](std::span<const double>) { return static_cast<double>(++calls); };
  const auto r = minimize_batch(f, Vector{0.2, 0.2}, cube(2, 0.2, 0.2), BatchOptions{});
  EXPECT_EQ(calls, 0u);
  EXPECT_EQ(r.evaluations, 0u);
  EXPECT_TRUE(std::isinf(r.best_value));
}

TEST(MinimizeBatchProperty, FeasibleMonotoneAndWithinBudget) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t b = 2 + static_cast<std::size_t>(trial % 7);
    Vector lo(b), hi(b), c(b), w(b), curv(b);
    for (std::size_t i = 0; i < b; ++i) {
      lo[i] = -u(rng);
      hi[i] = trial % 5 == 0 && i == 0 ? lo[i] : u(rng);
      c[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
      w[i] = nd(rng);
      curv[i] = nd(rng);
    }
    const BoxBounds box(lo, hi);
    std::vector<Vector> seen;
    auto f = [&](std::span<const double> x) {
      seen.emplace_back(x.begin(), x.end());
      double v = std::sin(3 * x[0]);
      for (std::size_t i = 0; i < b; ++i) v += w[i] * x[i] + curv[i] * x[i] * x[i];
      return v;
    };
    BatchOptions opts;
    opts.kind = trial % 2 ? ModelKind::linear : ModelKind::diag_quadratic;
    opts.initial_radius = 0.3;
    opts.max_evaluations = 2 * b + 10;
    const std::size_t global = trial % 3 == 0 ? b + 3 : 1000;
    const auto r = minimize_batch(f, c, box, opts, global);
    EXPECT_LE(r.evaluations, std::min(opts.max_evaluations, global));
    EXPECT_EQ(seen.size(), r.evaluations);
    for (const auto& x : seen) {
      EXPECT_TRUE(box.contains(x));
      if (box.frozen(0)) EXPECT_EQ(x[0], c[0]);
    }
    for (std::size_t k = 1; k < r.best_trace.size(); ++k) EXPECT_LE(r.best_trace[k], r.best_trace[k - 1]);
    if (!seen.empty()) {
      EXPECT_EQ(seen.front(), c);
      EXPECT_LE(r.best_value, r.best_trace.front());
    }
  }
}

TEST(MinimizeBatch, KnownCenterValueSkipsThatEvaluation) {
  const Vector w{0.7, -1.2, 0.4};
  std::vector<Vector> seen;
  auto f = [&](std::span<const double> x) {
    seen.emplace_back(x.begin(), x.end());
    return 1.0 + w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
  };
  BatchOptions opts;
  opts.initial_radius = 0.5;
  opts.max_evaluations = 20;
  const auto plain = minimize_batch(f, Vector(3, 0.0), cube(3, -1, 1), opts);
  seen.clear();
  opts.center_value = 1.0;
  const auto reused = minimize_batch(f, Vector(3, 0.0), cube(3, -1, 1), opts);
  EXPECT_EQ(reused.evaluations + 1, plain.evaluations);
  EXPECT_EQ(seen.size(), reused.evaluations);
  for (const auto& x : seen) EXPECT_NE(x, Vector(3, 0.0));
  EXPECT_EQ(reused.best_point, plain.best_point);
  EXPECT_EQ(reused.best_value, plain.best_value);
}
