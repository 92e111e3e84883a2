#pragma once

// Independent and slower verifiers: grid Sinkhorn solvers for the transport
// problems, Monte Carlo evaluation of the objectives on Gaussian mixtures, and
// a multistart local search for UDC in the original feedback coordinates.

#include <cstdint>
#include <vector>

#include "gudc/euot.hpp"
#include "gudc/maxent.hpp"
#include "gudc/sim.hpp"
#include "gudc/udc.hpp"
#include "gudc/uot.hpp"

namespace gudc {

/// [min mean - 6 max std, max mean + 6 max std] for one-dimensional references.
Grid1D default_grid(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, int n);

struct GridPlan {
  double value = 0.0;       // objective without the Sinkhorn regularizer (UOT) or the exact objective (EUOT)
  Mat plan;                 // n x n, entries are cell masses
  Vec a, b;                 // discretized references
  double residual = 0.0;    // log-domain fixed-point residual of the last stage
  double dual_gap = 0.0;    // regularized primal minus dual at the last stage
  int iterations = 0;

  double mass() const { return plan.sum(); }
};

/// Default schedule {1e-1, 3e-2, 1e-2} (hi - lo)^2 / n.
std::vector<double> default_eps_schedule(const Grid1D& grid);

/// Discretized UOT by generalized Sinkhorn with decreasing entropic weight;
/// the value is the unregularized objective at the final plan.
GridPlan grid_uot(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, double gamma,
                  const Grid1D& grid, std::vector<double> eps_schedule = {});

/// Discretized EUOT; the entropic term is part of the problem, so one
/// Sinkhorn solve at eps = sigma is exact on the grid.
GridPlan grid_euot(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, double gamma,
                   double sigma, const Grid1D& grid);

/// Mean and covariance of the plan on the grid: (x1, x2) moments and mass.
GaussianPlan grid_plan_moments(const GridPlan& plan, const Grid1D& grid);

struct MultistartResult {
  double best = 0.0;
  std::vector<double> values;  // local minimum reached from each restart
};

/// Local search over (log c, m_1, chol Sigma_1, v_t, K_t, chol Sigma^u_t) from
/// random starts; epsilon > 0 adds the entropy reward. Small instances only.
MultistartResult multistart_udc(const UDCProblem& problem, int restarts, std::uint64_t seed,
                                double epsilon = 0.0);

// ---- Monte Carlo ----

/// mass * sum_k w_k N(means_k, covs_k), weights summing to one.
struct GaussianMixture {
  double mass = 1.0;
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;

  int dim() const { return static_cast<int>(means.front().size()); }
  int components() const { return static_cast<int>(weights.size()); }
  void validate() const;
  /// Log density of the normalized mixture.
  double log_density(const Vec& x) const;
  Vec sample(NormalStream& rng) const;
  Vec mean() const;
  Mat cov() const;
  /// Coordinates [begin, begin + size) as a mixture.
  GaussianMixture marginal(int begin, int size) const;
  UnbalancedGaussian moment_match() const { return {mass, mean(), cov()}; }
};

/// One step of a mixture policy: with probability w_k, u = K_k x + b_k + N(0, Sigma_k).
struct MixtureKernel {
  std::vector<double> weights;
  std::vector<Mat> gains;
  std::vector<Vec> offsets;
  std::vector<Mat> covs;

  int components() const { return static_cast<int>(weights.size()); }
  double log_density(const Vec& u, const Vec& x) const;
  Vec sample(const Vec& x, NormalStream& rng) const;
};

/// Mixture initial measure driven by mixture kernels (the choice is independent of x).
struct MixtureProcess {
  GaussianMixture initial;
  std::vector<MixtureKernel> kernels;  // T-1

  /// Exact moment sequences under the system.
  ProcessMoments moments(const LinearSystem& system) const;
  /// Exact law of x_T: every path of component choices is one Gaussian.
  GaussianMixture terminal(const LinearSystem& system) const;
};

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Unbalanced KL(mu || nu) by sampling mu.
McEstimate mc_kl(const GaussianMixture& mu, const UnbalancedGaussian& nu, int n_samples, std::uint64_t seed);

/// J1 of a mixture plan on R^{2d} (first d coordinates are x1).
McEstimate mc_functional(const UOTProblem& problem, const GaussianMixture& plan, int n_samples,
                         std::uint64_t seed);
/// J3 of a mixture plan.
McEstimate mc_functional(const EUOTProblem& problem, const GaussianMixture& plan, int n_samples,
                         std::uint64_t seed);
/// J2 of a mixture process.
McEstimate mc_functional(const UDCProblem& problem, const MixtureProcess& process, int n_samples,
                         std::uint64_t seed);
/// J4 of a mixture process.
McEstimate mc_functional(const MaxEntUDCProblem& problem, const MixtureProcess& process, int n_samples,
                         std::uint64_t seed);

/// Moment-matched Gaussian plan of a mixture plan.
GaussianPlan gaussianize_plan(const GaussianMixture& plan);

}  // namespace gudc
