#pragma once

// Primitives on (unbalanced) Gaussian measures c * N(m, S): PSD matrix
// functions, mass-aware KL divergence, the Gelbrich/Bures cost, optimal affine
// maps between Gaussians and differential entropy.

#include <Eigen/Dense>

#include "gudc/error.hpp"

namespace gudc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPsdTol = 1e-10;

/// Mass together with mean and covariance: the measure mass * N(mean, cov).
struct UnbalancedGaussian {
  double mass = 1.0;
  Vec mean;
  Mat cov;

  int dim() const { return static_cast<int>(mean.size()); }

  /// Throws unless mass >= 0 and cov is symmetric PSD of matching size.
  /// Reference measures additionally need mass > 0 and cov positive definite.
  void validate(bool as_reference = false) const;
};

/// x -> linear * x + offset.
struct AffineMap {
  Mat linear;
  Vec offset;

  Vec operator()(const Vec& x) const { return linear * x + offset; }
};

Mat symmetrize(const Mat& S);

/// Throws NonSymmetric when |S - S^T| exceeds tol (relative to 1 + |S|).
void check_symmetric(const Mat& S, double tol = kSymmetryTol);

/// Principal square root of a symmetric PSD matrix. Eigenvalues in
/// [-1e-10, 0) are clamped to zero.
Mat psd_sqrt(const Mat& S);

/// S^{-1/2} for S positive definite.
Mat pd_inv_sqrt(const Mat& S);

/// Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// cutoff * max(1, largest eigenvalue) are treated as zero.
Mat psd_pseudo_inverse(const Mat& S, double cutoff = 1e-10);

/// log det S via Cholesky; falls back to clamped eigenvalues and throws
/// SingularCovariance when the smallest eigenvalue is below 1e-12.
double log_det(const Mat& S);

bool is_positive_definite(const Mat& S);

double min_eigenvalue(const Mat& S);

/// tr((S1^{1/2} S2 S1^{1/2})^{1/2}), symmetric in its arguments.
double trace_sqrt_coupling(const Mat& S1, const Mat& S2);

/// phi_{c'}(c) = c log(c / c') - c + c', with phi(0) = c'.
double mass_divergence(double c, double c_ref);

/// KL(N(m1,S1) || N(m2,S2)) for probability Gaussians.
double kl_gaussian(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2);

/// KL(mu || nu) between unbalanced Gaussians, including the -c + c' mass
/// terms. Returns nu.mass when mu.mass == 0.
double kl_unbalanced_gaussian(const UnbalancedGaussian& mu, const UnbalancedGaussian& nu);

/// Squared 2-Wasserstein distance between N(m1,S1) and N(m2,S2).
double gelbrich_cost(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2);

/// Monge map pushing N(m1,S1) onto N(m2,S2); S1 must be positive definite.
AffineMap optimal_affine_map(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2);

/// 0.5 * log det(2 pi e S).
double gaussian_entropy(const Mat& S);

/// Density of N(mean, cov) at x.
double gaussian_density(const Vec& x, const Vec& mean, const Mat& cov);

/// log N(x; mean, cov) given the lower Cholesky factor of cov.
double gaussian_log_density(const Vec& x, const Vec& mean, const Mat& cov_chol_lower,
                            double log_det_cov);

}  // namespace gudc
