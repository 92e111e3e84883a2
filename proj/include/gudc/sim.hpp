#pragma once

// Moment propagation and Monte Carlo sampling of the controlled linear system
// under Gaussian-affine policies.

#include <cstdint>
#include <random>
#include <vector>

#include "gudc/gaussmeas.hpp"
#include "gudc/udc.hpp"

namespace gudc {

struct MomentSequence {
  double mass = 0.0;
  std::vector<Vec> means;
  std::vector<Mat> covs;
};

/// Exact recursion m_{t+1} = A m_t + B (K_t (m_t - a_t) + v_t),
/// Sigma_{t+1} = (A + B K_t) Sigma_t (A + B K_t)^T + B Sigma^u_t B^T.
MomentSequence propagate_moments(const LinearSystem& system, const AffinePolicy& policy,
                                 const UnbalancedGaussian& initial);

struct TrajectoryEnsemble {
  int n_paths = 0;
  int horizon = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  /// states[(path * horizon + t) * dim + i], t zero-based.
  std::vector<double> states;

  Vec state(int path, int t) const;
  Vec sample_mean(int t) const;
  Mat sample_cov(int t) const;
};

/// Standard normal source: std::mt19937_64 bits, 53-bit uniforms and
/// Box-Muller. Unlike std::normal_distribution the output is the same on
/// every standard library.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed);
  double next();
  Vec next(int n);
  /// Uniform on (0, 1).
  double uniform();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Substream seed for an index; independent of scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Samples from N(mean, cov) given cov = L L^T; eigenvalue-clamped factor for PSD cov.
Mat sampling_factor(const Mat& cov);

/// Paths are sampled in parallel with per-path seeds; the result does not
/// depend on the number of threads (GAUSS_UDC_THREADS caps it).
TrajectoryEnsemble sample_trajectories(const LinearSystem& system, const AffinePolicy& policy,
                                       const UnbalancedGaussian& initial, int n_paths,
                                       std::uint64_t seed);

/// Nodes lo + (i + 1/2) h with equal cell widths h = (hi - lo) / n.
struct Grid1D {
  double lo = 0.0;
  double hi = 1.0;
  int n = 0;
  Vec points;
  Vec weights;

  static Grid1D uniform(double lo, double hi, int n);
};

/// Mass-scaled density of a one-dimensional measure at the grid nodes.
Vec density_on_grid(const UnbalancedGaussian& measure, const Grid1D& grid);

/// Number of worker threads: GAUSS_UDC_THREADS if set, else hardware concurrency.
int worker_threads();

}  // namespace gudc
