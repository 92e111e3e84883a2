#include <doctest.h>

#include <cmath>

#include "gudc/convexcore.hpp"
#include "test_util.hpp"

using namespace gudc;
using namespace gudc::convex;
using testutil::random_spd;
using testutil::randn;

namespace {

Mat random_sym(std::mt19937_64& rng, int d) {
  const Mat g = randn(rng, d, d);
  return 0.5 * (g + g.transpose());
}

void check_descent(const SolveReport& r) {
  for (std::size_t k = 1; k < r.outer_objectives.size(); ++k) {
    CHECK(r.outer_objectives[k] <= r.outer_objectives[k - 1] + 1e-9 * (1 + std::abs(r.outer_objectives[k - 1])));
  }
}

}  // namespace

TEST_SUITE("convexcore") {

TEST_CASE("unconstrained squared norm") {
  ConvexProgram p;
  const VarId v = p.add_vector("v", 2);
  p.add_squared_norm(p.expr(v), 1.0);
  p.add_equality(p.expr(v) - p.expr(v));  // v = v is vacuous
  CHECK(p.num_equalities() == 0);
  Assignment start = p.zeros();
  start[v] << 1.0, 2.0;
  const Solution s = minimize(p, start);
  CHECK(s.report.status == SolveStatus::Optimal);
  CHECK(s.values[v].norm() < 1e-10);
  CHECK(std::abs(s.report.objective_value) < 1e-12);
}

TEST_CASE("trace minus log det has minimizer I") {
  ConvexProgram p;
  const VarId X = p.add_symmetric("X", 2);
  p.add_trace_linear(p.expr(X), Mat::Identity(2, 2));
  p.add_neg_log_det(p.expr(X), 1.0);
  Assignment start = p.zeros();
  start[X] << 3.0, 0.5, 0.5, 1.0;
  const Solution s = minimize(p, start);
  CHECK(s.report.status == SolveStatus::Optimal);
  CHECK((s.values[X] - Mat::Identity(2, 2)).norm() < 1e-8);
  CHECK(s.report.objective_value == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.report.stationarity_residual <= 1e-8);
}

TEST_CASE("Bures objective with S1 fixed at I") {
  for (int d : {1, 2, 3}) {
    ConvexProgram p;
    const VarId S1 = p.add_symmetric("S1", d);
    const VarId S2 = p.add_symmetric("S2", d);
    p.add_trace_linear(p.expr(S1), Mat::Identity(d, d));
    p.add_trace_linear(p.expr(S2), Mat::Identity(d, d));
    p.add_trace_sqrt_coupling(S1, S2, 2.0);
    p.add_equality(p.expr(S1) - Mat(Mat::Identity(d, d)), true);
    Assignment start = p.zeros();
    start[S1] = Mat::Identity(d, d);
    start[S2] = 2.5 * Mat::Identity(d, d);
    start[S2](0, 0) = 0.7;
    const Solution s = minimize(p, start);
    CHECK(s.report.status == SolveStatus::Optimal);
    CHECK((s.values[S2] - Mat::Identity(d, d)).norm() < 1e-6);
    CHECK(std::abs(s.report.objective_value) < 1e-10);
    // Grid over scalar multiples s * I: d + d s - 2 d sqrt(s).
    double best = 1e300;
    for (int k = 1; k <= 4000; ++k) {
      const double sc = k * 1e-3;
      best = std::min(best, d + d * sc - 2.0 * d * std::sqrt(sc));
    }
    CHECK(s.report.objective_value <= best + 1e-12);
    CHECK(s.report.lagrangian_residual <= 1e-7);
  }
}

TEST_CASE("atom gradient examples") {
  CHECK((neg_log_det_gradient(Mat::Identity(3, 3)) + Mat::Identity(3, 3)).norm() < 1e-15);
  const auto [G1, G2] = trace_sqrt_gradient(Mat::Identity(2, 2), Mat::Identity(2, 2));
  CHECK((G2 - 0.5 * Mat::Identity(2, 2)).norm() < 1e-14);
  CHECK((G1 - 0.5 * Mat::Identity(2, 2)).norm() < 1e-14);
  Mat sing = Mat::Identity(2, 2);
  sing(1, 1) = 1e-12;
  try {
    trace_sqrt_gradient(sing, Mat::Identity(2, 2));
    FAIL("expected DomainBoundary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainBoundary);
  }
  CHECK_THROWS_AS(neg_log_det_gradient(-Mat::Identity(2, 2)), Error);
}

TEST_CASE("atom gradients match central differences") {
  std::mt19937_64 rng(23);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 3;
    const Mat S1 = random_spd(rng, d, 0.5), S2 = random_spd(rng, d, 0.5);
    const Mat E = random_sym(rng, d);
    const auto [G1, G2] = trace_sqrt_gradient(S1, S2);
    const double fd2 = (trace_sqrt_coupling(S1, S2 + h * E) - trace_sqrt_coupling(S1, S2 - h * E)) / (2 * h);
    const double fd1 = (trace_sqrt_coupling(S1 + h * E, S2) - trace_sqrt_coupling(S1 - h * E, S2)) / (2 * h);
    CHECK(std::abs(fd2 - (G2.cwiseProduct(E)).sum()) <= 1e-5 * std::max(1.0, std::abs(fd2)));
    CHECK(std::abs(fd1 - (G1.cwiseProduct(E)).sum()) <= 1e-5 * std::max(1.0, std::abs(fd1)));
    const Mat G = neg_log_det_gradient(S1);
    const double fdl = (-log_det(S1 + h * E) + log_det(S1 - h * E)) / (2 * h);
    CHECK(std::abs(fdl - G.cwiseProduct(E).sum()) <= 1e-5 * std::max(1.0, std::abs(fdl)));
  }
}

TEST_CASE("program gradient matches central differences") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2;
    ConvexProgram p;
    const VarId m = p.add_vector("m", d);
    const VarId A = p.add_symmetric("A", d);
    const VarId B = p.add_symmetric("B", d);
    const VarId K = p.add_matrix("K", d, d);
    const Mat W = random_spd(rng, d);
    p.add_mean_quadratic(p.expr(m), randn(rng, d), W);
    p.add_squared_norm(p.expr(K) * Mat(randn(rng, d, d)) + p.expr(m) * Mat(randn(rng, 1, d)), 0.7);
    p.add_trace_linear(p.expr(A), random_spd(rng, d));
    p.add_neg_log_det(p.expr(A) + p.expr(B), 0.3);
    p.add_neg_log_det(p.expr(B), 1.1);
    p.add_trace_sqrt_coupling(A, B, 1.5);
    Assignment a = p.zeros();
    a[m] = randn(rng, d);
    a[A] = random_spd(rng, d);
    a[B] = random_spd(rng, d);
    a[K] = randn(rng, d, d);
    const Vec x = p.pack(a);
    const Vec g = p.gradient(x);
    for (int i = 0; i < x.size(); ++i) {
      Vec xp = x, xm = x;
      xp(i) += 1e-5;
      xm(i) -= 1e-5;
      const double fd = (p.objective(xp) - p.objective(xm)) / 2e-5;
      CHECK(std::abs(fd - g(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    // Matrix-form gradient agrees with the flat one along a random direction.
    const Assignment G = p.gradient(a);
    Assignment dir = p.zeros();
    dir[m] = randn(rng, d);
    dir[A] = random_sym(rng, d);
    dir[B] = random_sym(rng, d);
    dir[K] = randn(rng, d, d);
    double lin = 0.0;
    for (VarId v : {m, A, B, K}) lin += G[v].cwiseProduct(dir[v]).sum();
    CHECK(lin == doctest::Approx(g.dot(p.pack(dir))).epsilon(1e-12));
  }
}

TEST_CASE("equality constrained least squares certificate") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6, k = 3;
    const Mat C = randn(rng, k, n);
    const Vec a = randn(rng, n), b = randn(rng, k);
    ConvexProgram p;
    const VarId x = p.add_vector("x", n);
    p.add_squared_norm(p.expr(x) - Mat(a), 1.0);
    p.add_equality(C * p.expr(x) - Mat(b));
    const Solution s = minimize(p, p.zeros());
    // Closed form projection onto {Cx = b}.
    const Vec xs = a - C.transpose() * (C * C.transpose()).ldlt().solve(C * a - b);
    CHECK(s.report.status == SolveStatus::Optimal);
    CHECK((s.values.vector(x) - xs).norm() < 1e-9);
    CHECK(s.report.equality_residual <= 1e-8);
    CHECK(s.report.lagrangian_residual <= 10 * 1e-8);
  }
}

TEST_CASE("Schur complement LMI recovers y = s^2 / sigma") {
  ConvexProgram p;
  const VarId Z = p.add_symmetric("Z", 2);
  Mat e00 = Mat::Zero(2, 2);
  e00(0, 0) = 1.0;
  p.add_trace_linear(p.expr(Z), e00);
  const Mat r1 = Mat::Identity(2, 2).row(1);
  const Mat r0 = Mat::Identity(2, 2).row(0);
  p.add_equality(r0 * p.expr(Z) * r1.transpose() - Mat::Constant(1, 1, 0.6));
  p.add_equality(r1 * p.expr(Z) * r1.transpose() - Mat::Constant(1, 1, 0.5));
  p.add_psd_constraint(p.expr(Z));
  Assignment start = p.zeros();
  start[Z] << 5.0, 0.6, 0.6, 0.5;
  const Solution s = minimize(p, start);
  CHECK(s.report.status == SolveStatus::Optimal);
  CHECK(s.values[Z](0, 0) == doctest::Approx(0.72).epsilon(1e-7));
  CHECK(s.report.min_cone_eigenvalue >= -1e-9);
  CHECK(s.report.barrier_parameter_final == doctest::Approx(1e-9));
  check_descent(s.report);
}

TEST_CASE("infeasible start is rejected") {
  ConvexProgram p;
  const VarId X = p.add_symmetric("X", 2);
  p.add_neg_log_det(p.expr(X), 1.0);
  try {
    minimize(p, p.zeros());
    FAIL("expected Infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
  }
  CHECK_THROWS_AS(p.add_neg_log_det(p.expr(X), -1.0), Error);
  CHECK_THROWS_AS(p.add_trace_sqrt_coupling(X, X, 1.0), Error);
  CHECK_THROWS_AS(p.add_squared_norm(p.expr(VarId{7}), 1.0), Error);
}

TEST_CASE("iteration cap is reported") {
  ConvexProgram p;
  const VarId X = p.add_symmetric("X", 2);
  p.add_trace_linear(p.expr(X), Mat::Identity(2, 2));
  p.add_psd_constraint(p.expr(X) - Mat(0.1 * Mat::Identity(2, 2)));
  Assignment start = p.zeros();
  start[X] = 50.0 * Mat::Identity(2, 2);
  SolverConfig cfg;
  cfg.max_iter = 2;
  const Solution s = minimize(p, start, cfg);
  CHECK(s.report.status == SolveStatus::MaxIterations);
  CHECK(s.report.iterations == 2);
}

TEST_CASE("random programs are midpoint convex") {
  std::mt19937_64 rng(37);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 3;
    ConvexProgram p;
    const VarId m = p.add_vector("m", d);
    const VarId A = p.add_symmetric("A", d);
    const VarId B = p.add_symmetric("B", d);
    p.add_mean_quadratic(p.expr(m), randn(rng, d), random_spd(rng, d, 0.0));
    p.add_squared_norm(Mat(randn(rng, d, d)) * p.expr(A) + p.expr(m) * Mat(randn(rng, 1, d)), testutil::uniform(rng, 0, 2));
    p.add_trace_linear(p.expr(A) + p.expr(B), random_sym(rng, d));
    p.add_neg_log_det(p.expr(A), testutil::uniform(rng, 0, 2));
    p.add_neg_log_det(p.expr(A) + p.expr(B), testutil::uniform(rng, 0, 2));
    p.add_trace_sqrt_coupling(A, B, testutil::uniform(rng, 0, 2));
    for (int pair = 0; pair < 5; ++pair) {
      Assignment x = p.zeros(), y = p.zeros(), mid = p.zeros();
      x[m] = randn(rng, d);
      y[m] = randn(rng, d);
      x[A] = random_spd(rng, d, 0.05);
      y[A] = random_spd(rng, d, 0.05);
      x[B] = random_spd(rng, d, 0.05);
      y[B] = random_spd(rng, d, 0.05);
      for (VarId v : {m, A, B}) mid[v] = 0.5 * (x[v] + y[v]);
      CHECK(p.objective(mid) <= 0.5 * (p.objective(x) + p.objective(y)) + 1e-9);
      ++checked;
    }
  }
  CHECK(checked == 250);
}

}  // TEST_SUITE
