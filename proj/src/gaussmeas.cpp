#include "gudc/gaussmeas.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gudc {

namespace {

Eigen::SelfAdjointEigenSolver<Mat> eig(const Mat& S) {
  return Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(S));
}

double psd_floor(const Mat& S) { return -kPsdTol * std::max(1.0, S.cwiseAbs().maxCoeff()); }

void require_square(const Mat& S, const char* what) {
  if (S.rows() != S.cols()) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " must be square");
  }
}

}  // namespace

void UnbalancedGaussian::validate(bool as_reference) const {
  if (!(mass >= 0.0) || !std::isfinite(mass)) {
    throw Error(ErrorCode::InvalidArgument, "mass must be a finite nonnegative number");
  }
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "covariance shape does not match mean");
  }
  check_symmetric(cov);
  const double lo = min_eigenvalue(cov);
  if (lo < psd_floor(cov)) {
    throw Error(ErrorCode::IndefiniteInput, "covariance is not positive semidefinite");
  }
  if (as_reference) {
    if (!(mass > 0.0)) throw Error(ErrorCode::InvalidArgument, "reference mass must be positive");
    if (!is_positive_definite(cov)) {
      throw Error(ErrorCode::SingularReference, "reference covariance must be positive definite");
    }
  }
}

Mat symmetrize(const Mat& S) { return 0.5 * (S + S.transpose()); }

void check_symmetric(const Mat& S, double tol) {
  require_square(S, "matrix");
  if (S.size() == 0) return;
  const double scale = 1.0 + S.cwiseAbs().maxCoeff();
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw Error(ErrorCode::NonSymmetric, "matrix is not symmetric");
  }
}

Mat psd_sqrt(const Mat& S) {
  check_symmetric(S);
  if (S.size() == 0) return S;
  const auto es = eig(S);
  Vec ev = es.eigenvalues();
  if (ev.minCoeff() < psd_floor(S)) {
    throw Error(ErrorCode::IndefiniteInput, "matrix has a negative eigenvalue");
  }
  // Eigenvalues within the PSD tolerance of zero are roundoff; their square
  // roots would otherwise be O(1e-8).
  const double zero = -psd_floor(S);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) <= zero ? 0.0 : std::sqrt(ev(i));
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Mat pd_inv_sqrt(const Mat& S) {
  check_symmetric(S);
  const auto es = eig(S);
  const Vec& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) {
    throw Error(ErrorCode::SingularCovariance, "matrix is not positive definite");
  }
  const Vec inv = ev.cwiseSqrt().cwiseInverse();
  return symmetrize(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
}

Mat psd_pseudo_inverse(const Mat& S, double cutoff) {
  check_symmetric(S);
  if (S.size() == 0) return S;
  const auto es = eig(S);
  const Vec& ev = es.eigenvalues();
  const double thresh = cutoff * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vec inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > thresh ? 1.0 / ev(i) : 0.0;
  return symmetrize(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
}

double log_det(const Mat& S) {
  require_square(S, "matrix");
  const Mat sym = symmetrize(S);
  Eigen::LLT<Mat> llt(sym);
  if (llt.info() == Eigen::Success) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }
  const Vec ev = eig(sym).eigenvalues();
  if (ev.minCoeff() < 1e-12) {
    throw Error(ErrorCode::SingularCovariance, "log det of a singular matrix");
  }
  return ev.array().log().sum();
}

bool is_positive_definite(const Mat& S) {
  if (S.rows() != S.cols()) return false;
  Eigen::LLT<Mat> llt(symmetrize(S));
  return llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0;
}

double min_eigenvalue(const Mat& S) {
  if (S.size() == 0) return 0.0;
  return eig(S).eigenvalues().minCoeff();
}

double trace_sqrt_coupling(const Mat& S1, const Mat& S2) {
  if (S1.rows() != S2.rows()) throw Error(ErrorCode::DimensionMismatch, "covariance sizes differ");
  const Mat r = psd_sqrt(S1);
  const Vec ev = eig(r * symmetrize(S2) * r).eigenvalues();
  return ev.cwiseMax(0.0).cwiseSqrt().sum();
}

double mass_divergence(double c, double c_ref) {
  if (c <= 0.0) return c_ref;
  return c * std::log(c / c_ref) - c + c_ref;
}

double kl_gaussian(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  const auto d = static_cast<double>(m1.size());
  Eigen::LLT<Mat> llt(symmetrize(S2));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularReference, "reference covariance is not invertible");
  }
  const Vec diff = m2 - m1;
  const double trace_term = llt.solve(symmetrize(S1)).trace();
  const double maha = diff.dot(llt.solve(diff));
  return 0.5 * (trace_term + maha - d + log_det(S2) - log_det(S1));
}

double kl_unbalanced_gaussian(const UnbalancedGaussian& mu, const UnbalancedGaussian& nu) {
  if (mu.dim() != nu.dim()) throw Error(ErrorCode::DimensionMismatch, "measures differ in dimension");
  if (!(nu.mass > 0.0)) throw Error(ErrorCode::SingularReference, "reference mass must be positive");
  if (!is_positive_definite(nu.cov)) {
    throw Error(ErrorCode::SingularReference, "reference covariance is not invertible");
  }
  if (mu.mass <= 0.0) return nu.mass;
  if (!is_positive_definite(mu.cov)) {
    throw Error(ErrorCode::SingularCovariance, "measure is not absolutely continuous");
  }
  const double kl = kl_gaussian(mu.mean, mu.cov, nu.mean, nu.cov);
  return std::max(0.0, mu.mass * kl + mass_divergence(mu.mass, nu.mass));
}

double gelbrich_cost(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  if (m1.size() != m2.size() || S1.rows() != m1.size() || S2.rows() != m2.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mean/covariance dimensions differ");
  }
  const double value =
      (m2 - m1).squaredNorm() + S1.trace() + S2.trace() - 2.0 * trace_sqrt_coupling(S1, S2);
  return std::max(0.0, value);
}

AffineMap optimal_affine_map(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2) {
  if (m1.size() != m2.size() || S1.rows() != m1.size() || S2.rows() != m2.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mean/covariance dimensions differ");
  }
  if (!is_positive_definite(S1)) {
    throw Error(ErrorCode::SingularSource, "source covariance must be positive definite");
  }
  const Mat r = psd_sqrt(S1);
  const Mat r_inv = pd_inv_sqrt(S1);
  const Mat middle = psd_sqrt(symmetrize(r * symmetrize(S2) * r));
  AffineMap map;
  map.linear = symmetrize(r_inv * middle * r_inv);
  map.offset = m2 - map.linear * m1;
  return map;
}

double gaussian_entropy(const Mat& S) {
  const auto d = static_cast<double>(S.rows());
  return 0.5 * (d * std::log(2.0 * std::numbers::pi * std::numbers::e) + log_det(S));
}

double gaussian_log_density(const Vec& x, const Vec& mean, const Mat& cov_chol_lower,
                            double log_det_cov) {
  const auto d = static_cast<double>(x.size());
  const Vec z = cov_chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det_cov + z.squaredNorm());
}

double gaussian_density(const Vec& x, const Vec& mean, const Mat& cov) {
  Eigen::LLT<Mat> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularCovariance, "density of a singular Gaussian");
  }
  const Mat l = llt.matrixL();
  return std::exp(gaussian_log_density(x, mean, l, 2.0 * l.diagonal().array().log().sum()));
}

}  // namespace gudc
