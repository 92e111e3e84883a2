#pragma once

// Random problem instances and mixture inputs shared by unit and acceptance tests.

#include <cmath>
#include <random>

#include "gudc/oracle.hpp"
#include "gudc/udc.hpp"
#include "test_util.hpp"

namespace testutil {

inline gudc::UnbalancedGaussian scalar_gaussian(double mass, double mean, double var) {
  return {mass, Vec::Constant(1, mean), Mat::Constant(1, 1, var)};
}

inline gudc::UnbalancedGaussian random_measure(std::mt19937_64& rng, int d, double spread = 1.5) {
  return {uniform(rng, 0.5, 2.0), spread * randn(rng, d), random_spd(rng, d, 0.3)};
}

inline gudc::LinearSystem random_system(std::mt19937_64& rng, int d, int du, int T) {
  Mat A;
  do {
    A = Mat::Identity(d, d) + 0.4 * randn(rng, d, d);
  } while (std::abs(A.determinant()) < 0.2);
  Mat B;
  do {
    B = randn(rng, d, du);
  } while (du >= d && std::abs((B * B.transpose()).determinant()) < 0.1);
  return {A, B, T};
}

inline gudc::UDCProblem random_udc(std::mt19937_64& rng, int d, int du, int T) {
  const gudc::LinearSystem sys = random_system(rng, d, du, T);
  const gudc::UnbalancedGaussian a = random_measure(rng, d), b = random_measure(rng, d);
  return {sys, a, b, uniform(rng, 0.5, 5.0)};
}

inline std::vector<double> random_weights(std::mt19937_64& rng, int k) {
  std::vector<double> w(static_cast<std::size_t>(k));
  double s = 0.0;
  for (double& x : w) s += (x = uniform(rng, 0.2, 1.0));
  for (double& x : w) x /= s;
  return w;
}

inline gudc::GaussianMixture random_mixture(std::mt19937_64& rng, int dim, int k, double mass) {
  gudc::GaussianMixture m;
  m.mass = mass;
  m.weights = random_weights(rng, k);
  for (int i = 0; i < k; ++i) {
    m.means.push_back(randn(rng, dim));
    m.covs.push_back(0.5 * random_spd(rng, dim, 0.2));
  }
  return m;
}

/// Mixture kernels u = K_k x + b_k + N(0, Sigma_k) with PD noise.
inline gudc::MixtureProcess random_process(std::mt19937_64& rng, const gudc::LinearSystem& sys, int k,
                                           double mass) {
  const int d = sys.state_dim(), du = sys.control_dim();
  gudc::MixtureProcess p;
  p.initial = random_mixture(rng, d, k, mass);
  for (int t = 0; t + 1 < sys.horizon; ++t) {
    gudc::MixtureKernel ker;
    ker.weights = random_weights(rng, k);
    for (int i = 0; i < k; ++i) {
      ker.gains.push_back(0.4 * randn(rng, du, d));
      ker.offsets.push_back(randn(rng, du));
      ker.covs.push_back(0.3 * random_spd(rng, du, 0.1));
    }
    p.kernels.push_back(std::move(ker));
  }
  return p;
}

}  // namespace testutil
