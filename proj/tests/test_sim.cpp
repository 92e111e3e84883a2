#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "gudc/sim.hpp"
#include "gudc/udc.hpp"
#include "test_instances.hpp"

using namespace gudc;
using testutil::scalar_gaussian;

namespace {

UDCProblem section62(double gamma) {
  return {{Mat::Ones(1, 1), Mat::Ones(1, 1), 10}, scalar_gaussian(1.0, -4.0, 0.81), scalar_gaussian(0.4, 4.0, 0.36),
          gamma};
}

AffinePolicy open_loop(int d, int du, int steps, const Mat& noise) {
  AffinePolicy p;
  for (int t = 0; t < steps; ++t) {
    p.gains.push_back(Mat::Zero(du, d));
    p.feedforwards.push_back(Vec::Zero(du));
    p.anchors.push_back(Vec::Zero(d));
    p.noise_covs.push_back(noise);
  }
  return p;
}

struct EnvThreads {
  explicit EnvThreads(const char* v) { setenv("GAUSS_UDC_THREADS", v, 1); }
  ~EnvThreads() { unsetenv("GAUSS_UDC_THREADS"); }
};

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("moment propagation") {
  const UnbalancedGaussian init{0.7, Vec(Eigen::Vector2d(1.0, -2.0)), Mat(Eigen::Matrix2d{{1.0, 0.3}, {0.3, 0.5}})};

  SUBCASE("identity dynamics without control keep the moments") {
    const LinearSystem sys{Mat::Identity(2, 2), Mat::Identity(2, 2), 6};
    const MomentSequence ms = propagate_moments(sys, open_loop(2, 2, 5, Mat::Zero(2, 2)), init);
    CHECK(ms.mass == 0.7);
    for (int t = 0; t < 6; ++t) {
      CHECK((ms.means[t] - init.mean).norm() == 0.0);
      CHECK((ms.covs[t] - init.cov).norm() == 0.0);
    }
  }
  SUBCASE("random walk accumulates the noise") {
    const LinearSystem sys{Mat::Identity(2, 2), Mat::Identity(2, 2), 6};
    const Mat U = Mat(Eigen::Matrix2d{{0.2, 0.05}, {0.05, 0.1}});
    const MomentSequence ms = propagate_moments(sys, open_loop(2, 2, 5, U), init);
    for (int t = 0; t < 6; ++t) CHECK((ms.covs[t] - init.cov - t * U).norm() < 1e-14);
  }
  SUBCASE("shape errors") {
    const LinearSystem sys{Mat::Identity(2, 2), Mat::Identity(2, 2), 6};
    CHECK_THROWS_AS(propagate_moments(sys, open_loop(2, 2, 4, Mat::Zero(2, 2)), init), Error);
    CHECK_THROWS_AS(propagate_moments(sys, open_loop(3, 2, 5, Mat::Zero(2, 2)), init), Error);
  }
}

TEST_CASE("propagating the optimal policy lands on the solver endpoints") {
  for (double gamma : {1.0, 10.0}) {
    const UDCProblem p = section62(gamma);
    const UDCSolution s = solve_udc(p);
    const UnbalancedGaussian init{s.mass, s.trajectory.means[0], s.trajectory.covs[0]};
    const MomentSequence ms = propagate_moments(p.system, s.policy, init);
    CHECK(ms.mass == s.mass);
    for (int t = 0; t < 10; ++t) {
      CHECK(std::abs(ms.means[t](0) - s.trajectory.means[t](0)) < 1e-10);
      CHECK(std::abs(ms.covs[t](0, 0) - s.trajectory.covs[t](0, 0)) < 1e-10);
    }
  }
}

TEST_CASE("sampled moments agree with propagation") {
  std::mt19937_64 rng(3);
  const UDCProblem p = testutil::random_udc(rng, 2, 2, 6);
  const UDCSolution s = solve_udc(p);
  AffinePolicy pol = s.policy;
  for (auto& U : pol.noise_covs) U += 0.1 * Mat::Identity(2, 2);
  const UnbalancedGaussian init{s.mass, s.trajectory.means[0], s.trajectory.covs[0]};
  const MomentSequence ms = propagate_moments(p.system, pol, init);
  const int n = 100000;
  const TrajectoryEnsemble ens = sample_trajectories(p.system, pol, init, n, 99);
  for (int t = 0; t < 6; ++t) {
    const Vec m = ens.sample_mean(t);
    const Mat C = ens.sample_cov(t);
    for (int i = 0; i < 2; ++i) {
      const double var = ms.covs[t](i, i);
      CHECK(std::abs(m(i) - ms.means[t](i)) <= 3.0 * std::sqrt(var / n));
      // Gaussian variance estimator: sd = var sqrt(2 / (n - 1)).
      CHECK(std::abs(C(i, i) - var) <= 3.0 * var * std::sqrt(2.0 / (n - 1)));
    }
  }
}

TEST_CASE("zero covariances give deterministic paths") {
  const LinearSystem sys{Mat(Eigen::Matrix2d{{0.9, 0.1}, {0.0, 1.1}}), Mat::Identity(2, 1), 5};
  AffinePolicy pol = open_loop(2, 1, 4, Mat::Zero(1, 1));
  for (int t = 0; t < 4; ++t) {
    pol.gains[t] << 0.1 * t, -0.2;
    pol.feedforwards[t](0) = 0.5;
  }
  const UnbalancedGaussian init{1.0, Vec(Eigen::Vector2d(1.0, 2.0)), Mat::Zero(2, 2)};
  const MomentSequence ms = propagate_moments(sys, pol, init);
  const TrajectoryEnsemble ens = sample_trajectories(sys, pol, init, 50, 1);
  for (int k = 0; k < 50; ++k)
    for (int t = 0; t < 5; ++t) CHECK((ens.state(k, t) - ms.means[t]).norm() < 1e-12);
}

TEST_CASE("sampling is reproducible and independent of the thread count") {
  const UDCSolution s = solve_udc(section62(1.0));
  const LinearSystem sys = section62(1.0).system;
  const UnbalancedGaussian init{s.mass, s.trajectory.means[0], s.trajectory.covs[0]};
  AffinePolicy pol = s.policy;
  for (auto& U : pol.noise_covs) U(0, 0) += 0.05;

  TrajectoryEnsemble one, many;
  {
    EnvThreads env("1");
    one = sample_trajectories(sys, pol, init, 5000, 7);
  }
  {
    EnvThreads env("8");
    many = sample_trajectories(sys, pol, init, 5000, 7);
  }
  CHECK(one.states == many.states);
  CHECK(sample_trajectories(sys, pol, init, 5000, 7).states == one.states);
  CHECK(sample_trajectories(sys, pol, init, 5000, 8).states != one.states);
  CHECK(one.seed == 7);
}

TEST_CASE("normal stream") {
  NormalStream a(11), b(11);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  NormalStream c(12);
  double m = 0.0, v = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = c.next();
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 3.0 / std::sqrt(n));
  CHECK(std::abs(v - 1.0) < 3.0 * std::sqrt(2.0 / n));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("sampling factor of a singular covariance") {
  Mat C(2, 2);
  C << 1.0, 1.0, 1.0, 1.0;
  const Mat L = sampling_factor(C);
  CHECK((L * L.transpose() - C).norm() < 1e-12);
}

TEST_CASE("grid densities integrate to the mass") {
  const Grid1D g = Grid1D::uniform(-15.0, 15.0, 3000);
  CHECK(g.points.size() == 3000);
  CHECK(g.points(0) == doctest::Approx(-15.0 + 0.005));
  CHECK(g.weights.sum() == doctest::Approx(30.0));
  CHECK_THROWS_AS(Grid1D::uniform(0.0, 1.0, 10), Error);

  const UDCProblem p = section62(1.0);
  CHECK(density_on_grid(p.alpha, g).dot(g.weights) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(density_on_grid(p.beta, g).dot(g.weights) == doctest::Approx(0.4).epsilon(1e-9));
  const UDCSolution s = solve_udc(p);
  const UnbalancedGaussian terminal{s.mass, s.trajectory.means.back(), s.trajectory.covs.back()};
  CHECK(density_on_grid(terminal, g).dot(g.weights) == doctest::Approx(s.mass).epsilon(1e-9));

  const UnbalancedGaussian two_d{1.0, Vec::Zero(2), Mat::Identity(2, 2)};
  CHECK_THROWS_AS(density_on_grid(two_d, g), Error);
}

}  // TEST_SUITE
