#include <doctest.h>

#include <cmath>

#include "gudc/oracle.hpp"
#include "gudc/sim.hpp"
#include "gudc/udc.hpp"
#include "test_instances.hpp"

using namespace gudc;
using testutil::scalar_gaussian;

namespace {

UDCProblem section62(double gamma, int T = 10) {
  return {{Mat::Ones(1, 1), Mat::Ones(1, 1), T}, scalar_gaussian(1.0, -4.0, 0.81), scalar_gaussian(0.4, 4.0, 0.36),
          gamma};
}

void check_trajectory_invariants(const LiftedTrajectory& tr, const LinearSystem& sys) {
  for (int t = 0; t + 1 < tr.horizon(); ++t) {
    const Vec mres = tr.means[t + 1] - sys.A * tr.means[t] - sys.B * tr.feedforwards[t];
    CHECK(mres.cwiseAbs().maxCoeff() <= 1e-8);
    const Mat& S = tr.cross[t];
    const Mat cres = tr.covs[t + 1] - sys.A * tr.covs[t] * sys.A.transpose() - sys.B * S * sys.A.transpose() -
                     sys.A * S.transpose() * sys.B.transpose() - sys.B * tr.control_second[t] * sys.B.transpose();
    CHECK(cres.cwiseAbs().maxCoeff() <= 1e-8);
    const int du = static_cast<int>(S.rows()), d = static_cast<int>(S.cols());
    Mat lmi(du + d, du + d);
    lmi << tr.control_second[t], S, S.transpose(), tr.covs[t];
    CHECK(min_eigenvalue(lmi) >= -1e-9);
  }
}

// T = 2, d = d' = 1 by hand: the mean block is a 2x2 linear solve and the
// covariance block reduces to (r2 - |a| r1)^2 / b^2 plus endpoint terms in
// standard deviations r1, r2, minimized by Newton.
double scalar_two_step(const UDCProblem& p) {
  const double a = p.system.A(0, 0), b = p.system.B(0, 0), g = p.gamma;
  const double ma = p.alpha.mean(0), va = p.alpha.cov(0, 0), mb = p.beta.mean(0), vb = p.beta.cov(0, 0);
  // f(m1, v) = v^2 + g/2 (m1 - ma)^2 / va + g/2 (a m1 + b v - mb)^2 / vb.
  Eigen::Matrix2d H;
  H << g / va + g * a * a / vb, g * a * b / vb, g * a * b / vb, 2.0 + g * b * b / vb;
  const Eigen::Vector2d rhs(g * ma / va + g * a * mb / vb, g * b * mb / vb);
  const Eigen::Vector2d z = H.inverse() * rhs;
  const double mean_part = z(1) * z(1) + 0.5 * g * (z(0) - ma) * (z(0) - ma) / va +
                           0.5 * g * std::pow(a * z(0) + b * z(1) - mb, 2) / vb;
  const auto f = [&](double r1, double r2) {
    return std::pow(r2 - std::abs(a) * r1, 2) / (b * b) + 0.5 * g * (r1 * r1 / va - 2.0 * std::log(r1)) +
           0.5 * g * (r2 * r2 / vb - 2.0 * std::log(r2));
  };
  Eigen::Vector2d r(std::sqrt(va), std::sqrt(vb));
  for (int it = 0; it < 100; ++it) {
    const double h = 1e-5;
    Eigen::Vector2d grad;
    Eigen::Matrix2d hess;
    for (int i = 0; i < 2; ++i) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(i) = h;
      grad(i) = (f(r(0) + e(0), r(1) + e(1)) - f(r(0) - e(0), r(1) - e(1))) / (2 * h);
      for (int j = 0; j < 2; ++j) {
        Eigen::Vector2d e2 = Eigen::Vector2d::Zero();
        e2(j) = h;
        hess(i, j) = (f(r(0) + e(0) + e2(0), r(1) + e(1) + e2(1)) - f(r(0) + e(0) - e2(0), r(1) + e(1) - e2(1)) -
                      f(r(0) - e(0) + e2(0), r(1) - e(1) + e2(1)) + f(r(0) - e(0) - e2(0), r(1) - e(1) - e2(1))) /
                     (4 * h * h);
      }
    }
    Eigen::Vector2d step = hess.ldlt().solve(grad);
    while ((r - step).minCoeff() <= 0.0) step *= 0.5;
    r -= step;
    if (step.norm() < 1e-13) break;
  }
  const double p_star = mean_part + f(r(0), r(1));
  const double c = optimal_mass(p_star, p.endpoints());
  return c * p_star + uot_psi(c, p.endpoints());
}

ProcessMoments moments_of(const LinearSystem& sys, const UnbalancedGaussian& init, const AffinePolicy& pol) {
  const MomentSequence ms = propagate_moments(sys, pol, init);
  ProcessMoments mo;
  mo.mass = init.mass;
  mo.state_means = ms.means;
  mo.state_covs = ms.covs;
  for (int t = 0; t < pol.steps(); ++t) {
    const Mat& K = pol.gains[t];
    mo.control_means.push_back(K * (ms.means[t] - pol.anchors[t]) + pol.feedforwards[t]);
    mo.control_covs.push_back(K * ms.covs[t] * K.transpose() + pol.noise_covs[t]);
    mo.control_state.push_back(K * ms.covs[t]);
  }
  return mo;
}

}  // namespace

TEST_SUITE("udc") {

TEST_CASE("system validation") {
  CHECK_NOTHROW(LinearSystem{Mat::Identity(2, 2), Mat::Identity(2, 1), 2}.validate());
  CHECK_THROWS_AS((LinearSystem{Mat::Zero(2, 2), Mat::Identity(2, 1), 3}.validate()), Error);
  CHECK_THROWS_AS((LinearSystem{Mat::Identity(2, 2), Mat::Identity(2, 1), 1}.validate()), Error);
  CHECK_THROWS_AS((LinearSystem{Mat::Identity(2, 2), Mat::Identity(3, 1), 3}.validate()), Error);
  UDCProblem p = section62(3.0);
  p.gamma = -1.0;
  CHECK_THROWS_AS(solve_udc(p), Error);
}

TEST_CASE("coinciding references with A = 1 stay in place") {
  const UnbalancedGaussian ref = scalar_gaussian(1.0, 0.7, 0.5);
  const UDCProblem p{{Mat::Ones(1, 1), Mat::Ones(1, 1), 2}, ref, ref, 2.0};
  const UDCSolution s = solve_udc(p);
  CHECK(s.report.status == convex::SolveStatus::Optimal);
  CHECK(std::abs(s.trajectory.means[0](0) - 0.7) < 1e-7);
  CHECK(std::abs(s.trajectory.means[1](0) - 0.7) < 1e-7);
  CHECK(s.trajectory.feedforwards[0].norm() < 1e-7);
}

TEST_CASE("identity dynamics between equal references need no control") {
  std::mt19937_64 rng(71);
  for (int d : {1, 2}) {
    const UnbalancedGaussian ref{1.3, testutil::randn(rng, d), testutil::random_spd(rng, d)};
    const double g = 2.5;
    const UDCProblem p{{Mat::Identity(d, d), Mat::Identity(d, d), 4}, ref, ref, g};
    const UDCSolution s = solve_udc(p);
    // Endpoint terms at the reference: g/2 (d - log det) twice, no control cost.
    CHECK(s.p_star == doctest::Approx(g * (d - log_det(ref.cov))).epsilon(1e-7));
    CHECK(s.objective == doctest::Approx(s.mass * s.p_star + uot_psi(s.mass, p.endpoints())).epsilon(1e-12));
    for (int t = 0; t < s.policy.steps(); ++t) {
      CHECK(s.policy.gains[t].norm() < 1e-5);
      CHECK(s.policy.feedforwards[t].norm() < 1e-6);
    }
  }
}

TEST_CASE("endpoint means lean toward each other and approach the references as gamma grows") {
  double kl1_prev = 1e300, klT_prev = 1e300;
  for (double gamma : {3.0, 10.0}) {
    const UDCProblem p = section62(gamma);
    const UDCSolution s = solve_udc(p);
    CHECK(s.report.status == convex::SolveStatus::Optimal);
    CHECK(s.report.stationarity_residual <= 1e-8);
    check_trajectory_invariants(s.trajectory, p.system);
    CHECK(s.trajectory.means.front()(0) > -4.0);
    CHECK(s.trajectory.means.back()(0) < 4.0);
    const double kl1 = kl_unbalanced_gaussian({s.mass, s.trajectory.means.front(), s.trajectory.covs.front()}, p.alpha);
    const double klT = kl_unbalanced_gaussian({s.mass, s.trajectory.means.back(), s.trajectory.covs.back()}, p.beta);
    CHECK(kl1 < kl1_prev);
    CHECK(klT < klT_prev);
    kl1_prev = kl1;
    klT_prev = klT;
    CHECK(std::abs(uot_mass_derivative(s.mass, s.p_star, p.endpoints())) <= 1e-8);
  }
}

TEST_CASE("subproblem value is the objective at the returned point") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 6; ++trial) {
    const UDCProblem p = testutil::random_udc(rng, 1 + trial % 2, 1 + trial % 2, 2 + trial % 4);
    const CovarianceSteering cs = solve_covariance_steering(p);
    CHECK(cs.report.status == convex::SolveStatus::Optimal);
    CHECK(cs.p_star == doctest::Approx(steering_objective(cs.trajectory, p)).epsilon(1e-10));
    check_trajectory_invariants(cs.trajectory, p.system);
  }
}

TEST_CASE("two-step scalar instance against calculus and the multistart search") {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 3; ++trial) {
    const UDCProblem p = testutil::random_udc(rng, 1, 1, 2);
    const double exact = scalar_two_step(p);
    const UDCSolution s = solve_udc(p);
    CHECK(std::abs(s.objective - exact) <= 1e-6 * (1 + std::abs(exact)));
    const MultistartResult ms = multistart_udc(p, 8, 5);
    CHECK(std::abs(ms.best - exact) <= 1e-6 * (1 + std::abs(exact)));
    // T = 2 scalar: the certificate holds to solver precision.
    CHECK(check_deterministic(s.trajectory).max_residual() <= 1e-8);
  }
}

TEST_CASE("three-step scalar instances match the multistart search") {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 2; ++trial) {
    const UDCProblem p = testutil::random_udc(rng, 1, 1, 3);
    const UDCSolution s = solve_udc(p);
    const MultistartResult ms = multistart_udc(p, 64, 11);
    CHECK(std::abs(ms.best - s.objective) <= 1e-3);
  }
}

TEST_CASE("policy recovery") {
  const Mat I = Mat::Identity(2, 2);
  LiftedTrajectory tr;
  tr.means = {Vec::Zero(2), Vec::Zero(2)};
  tr.covs = {I, I};
  tr.feedforwards = {Vec::Zero(1)};
  tr.cross = {Mat::Zero(1, 2)};
  tr.control_second = {Mat::Zero(1, 1)};
  AffinePolicy pol = recover_policy(tr);
  CHECK(pol.gains[0].norm() == 0.0);
  CHECK(pol.noise_covs[0].norm() == 0.0);

  Mat S(1, 2);
  S << 0.3, -0.7;
  tr.cross = {S};
  tr.control_second = {S * S.transpose()};
  pol = recover_policy(tr);
  CHECK((pol.gains[0] - S).norm() < 1e-14);
  CHECK(pol.noise_covs[0].norm() < 1e-14);

  std::mt19937_64 rng(89);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 3, du = 1 + trial % 2;
    // Random feasible LMI block: Y = S Sigma^+ S^T + slack, Sigma possibly singular.
    Mat G = testutil::randn(rng, d, d);
    if (trial % 4 == 0) G.col(0).setZero();
    const Mat Sig = G * G.transpose();
    const Mat Sx = testutil::randn(rng, du, d) * Sig;
    const Mat slack = testutil::random_spd(rng, du, 0.0) * testutil::uniform(rng, 0.0, 1.0);
    LiftedTrajectory r;
    r.means = {Vec::Zero(d), Vec::Zero(d)};
    r.covs = {Sig, Sig};
    r.feedforwards = {Vec::Zero(du)};
    r.cross = {Sx};
    r.control_second = {symmetrize(Sx * psd_pseudo_inverse(symmetrize(Sig)) * Sx.transpose() + slack)};
    const AffinePolicy q = recover_policy(r);
    CHECK(min_eigenvalue(q.noise_covs[0]) >= -1e-9);
    if (is_positive_definite(Sig)) {
      // Re-lifting reproduces S and Y.
      CHECK((q.gains[0] * Sig - Sx).norm() <= 1e-8 * (1 + Sx.norm()));
      CHECK((q.gains[0] * Sig * q.gains[0].transpose() + q.noise_covs[0] - r.control_second[0]).norm() <=
            1e-8 * (1 + r.control_second[0].norm()));
    }
  }
}

TEST_CASE("optimal mass shares the transport formula") {
  const UnbalancedGaussian ref = scalar_gaussian(1.0, 0.0, 1.0);
  const UDCProblem p{{Mat::Ones(1, 1), Mat::Ones(1, 1), 3}, ref, ref, 1.0};
  CHECK(optimal_mass_udc(0.0, p) == doctest::Approx(std::exp(0.5)).epsilon(1e-14));
  const UDCProblem q = section62(3.0);
  CHECK(optimal_mass_udc(1.7, q) == optimal_mass(1.7, q.endpoints()));
}

TEST_CASE("realized objective of the recovered policy") {
  std::mt19937_64 rng(97);
  for (int trial = 0; trial < 8; ++trial) {
    const int d = 1 + trial % 2;
    const UDCProblem p = testutil::random_udc(rng, d, d, 2 + trial % 4);
    const UDCSolution s = solve_udc(p);
    const UnbalancedGaussian init{s.mass, s.trajectory.means[0], s.trajectory.covs[0]};
    const double realized = policy_objective(p, init, s.policy);
    CHECK(std::abs(realized - s.objective) <= 1e-6 * (1 + std::abs(s.objective)));
    // Propagating the policy reproduces the endpoint moments.
    const MomentSequence ms = propagate_moments(p.system, s.policy, init);
    CHECK((ms.means.back() - s.trajectory.means.back()).norm() <= 1e-8);
    CHECK((ms.covs.back() - s.trajectory.covs.back()).norm() <= 1e-8);
  }
}

TEST_CASE("deterministic certificate") {
  for (double gamma : {3.0, 10.0}) {
    const UDCSolution s = solve_udc(section62(gamma));
    const SchurCertificate c = check_deterministic(s.trajectory);
    CHECK(c.verdict == Verdict::Certified);
    CHECK(c.max_residual() <= 1e-6);
  }
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 2;
    const UDCSolution s = solve_udc(testutil::random_udc(rng, d, d, 2 + trial % 5));
    const SchurCertificate c = check_deterministic(s.trajectory);
    CHECK(c.verdict == Verdict::Certified);
    CHECK(c.max_residual() <= 1e-6);
  }
  // Inflated Y is feasible for the LMI but not deterministic.
  UDCSolution s = solve_udc(section62(3.0));
  LiftedTrajectory tr = s.trajectory;
  tr.control_second[2] += 0.1 * Mat::Identity(1, 1);
  CHECK(check_deterministic(tr).verdict == Verdict::NotCertified);
  tr.covs[1].setZero();
  CHECK(check_deterministic(tr).verdict == Verdict::NotApplicable);
}

TEST_CASE("Schur equivalence of the block LMI") {
  std::mt19937_64 rng(103);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int d = 1 + trial % 3, du = 1 + trial % 2;
    const Mat Sig = testutil::random_spd(rng, d, 0.1);
    const Mat S = testutil::randn(rng, du, d);
    const Mat tight = S * Sig.inverse() * S.transpose();
    // Perturb around the boundary in both directions.
    const Mat Y = symmetrize(tight + testutil::uniform(rng, -1e-6, 1e-6) * testutil::random_spd(rng, du, 0.0));
    Mat lmi(du + d, du + d);
    lmi << Y, S, S.transpose(), Sig;
    const bool lmi_ok = min_eigenvalue(lmi) >= 0.0;
    const bool schur_ok = min_eigenvalue(symmetrize(Y - tight)) >= 0.0;
    if (std::abs(min_eigenvalue(symmetrize(Y - tight))) > 1e-12) {
      CHECK(lmi_ok == schur_ok);
      ++checked;
    }
  }
  CHECK(checked > 200);
}

TEST_CASE("moment matching") {
  std::mt19937_64 rng(107);
  // Gaussian-affine input round-trips.
  const LinearSystem sys = testutil::random_system(rng, 2, 1, 4);
  AffinePolicy pol;
  for (int t = 0; t < 3; ++t) {
    pol.gains.push_back(testutil::randn(rng, 1, 2));
    pol.feedforwards.push_back(testutil::randn(rng, 1));
    pol.anchors.push_back(testutil::randn(rng, 2));
    pol.noise_covs.push_back(testutil::random_spd(rng, 1));
  }
  const UnbalancedGaussian init{0.7, testutil::randn(rng, 2), testutil::random_spd(rng, 2)};
  const GaussianizedProcess gp = moment_match_policy(moments_of(sys, init, pol));
  CHECK(gp.initial.mass == 0.7);
  const MomentSequence a = propagate_moments(sys, pol, init), b = propagate_moments(sys, gp.policy, gp.initial);
  for (int t = 0; t < 4; ++t) {
    CHECK((a.means[t] - b.means[t]).norm() < 1e-12);
    CHECK((a.covs[t] - b.covs[t]).norm() < 1e-12);
  }
  for (int t = 0; t < 3; ++t) {
    CHECK((gp.policy.gains[t] - pol.gains[t]).norm() < 1e-10);
    CHECK((gp.policy.noise_covs[t] - pol.noise_covs[t]).norm() < 1e-10);
  }

  // Lambda = O gives an open-loop policy.
  ProcessMoments open = moments_of(sys, init, pol);
  for (auto& L : open.control_state) L.setZero();
  const GaussianizedProcess og = moment_match_policy(open);
  for (int t = 0; t < 3; ++t) {
    CHECK(og.policy.gains[t].norm() == 0.0);
    CHECK((og.policy.noise_covs[t] - open.control_covs[t]).norm() < 1e-14);
  }

  ProcessMoments bad = moments_of(sys, init, pol);
  bad.control_covs[1] = Mat::Constant(1, 1, 1e-6);
  try {
    moment_match_policy(bad);
    FAIL("expected NonPSDMoments");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPSDMoments);
  }
}

TEST_CASE("moment matching of a mixture process against sampled moments") {
  std::mt19937_64 rng(109);
  const LinearSystem sys = testutil::random_system(rng, 1, 1, 3);
  const MixtureProcess proc = testutil::random_process(rng, sys, 3, 1.0);
  const ProcessMoments mo = proc.moments(sys);
  const GaussianizedProcess gp = moment_match_policy(mo);
  const MomentSequence prop = propagate_moments(sys, gp.policy, gp.initial);
  // Exact recursion side: the Gaussianized pair reproduces the mixture moments.
  for (int t = 0; t < 3; ++t) {
    CHECK((prop.means[t] - mo.state_means[t]).norm() < 1e-12);
    CHECK((prop.covs[t] - mo.state_covs[t]).norm() < 1e-12);
  }
  // Control-cost equality at moment level.
  double mix_cost = 0.0, gauss_cost = 0.0;
  for (int t = 0; t < 2; ++t) {
    mix_cost += mo.control_covs[t].trace() + mo.control_means[t].squaredNorm();
    const Mat& K = gp.policy.gains[t];
    const Vec u = K * (prop.means[t] - gp.policy.anchors[t]) + gp.policy.feedforwards[t];
    gauss_cost += (K * prop.covs[t] * K.transpose() + gp.policy.noise_covs[t]).trace() + u.squaredNorm();
  }
  CHECK(gauss_cost == doctest::Approx(mix_cost).epsilon(1e-12));

  // Monte Carlo side: sampled mixture paths.
  const int n = 1000000;
  NormalStream stream(2024);
  std::vector<Eigen::Vector3d> xs(n);
  for (int i = 0; i < n; ++i) {
    Vec x = proc.initial.sample(stream);
    xs[i](0) = x(0);
    for (int t = 0; t < 2; ++t) {
      const Vec u = proc.kernels[t].sample(x, stream);
      x = sys.A * x + sys.B * u;
      xs[i](t + 1) = x(0);
    }
  }
  for (int t = 0; t < 3; ++t) {
    double m = 0.0;
    for (const auto& x : xs) m += x(t);
    m /= n;
    double v = 0.0, m4 = 0.0;
    for (const auto& x : xs) {
      const double dx = x(t) - m;
      v += dx * dx;
      m4 += dx * dx * dx * dx;
    }
    v /= (n - 1);
    m4 /= n;
    const double se_mean = std::sqrt(v / n), se_var = std::sqrt((m4 - v * v) / n);
    CHECK(std::abs(m - prop.means[t](0)) <= 3.0 * se_mean);
    CHECK(std::abs(v - prop.covs[t](0, 0)) <= 3.0 * se_var);
  }
}

}  // TEST_SUITE
