#pragma once

// Unbalanced density control for x_{t+1} = A x_t + B u_t, t = 1..T-1:
//
//   min  c sum_t E|u_t|^2 + gamma KL(pi_1 || alpha) + gamma KL(pi_T || beta)
//
// over the initial measure pi_1 (mass c) and Markov control kernels. Gaussian
// initial measures with Gaussian-affine feedback are optimal; with the
// lifting S_t = K_t Sigma_t, Y_t = K_t Sigma_t K_t^T + Sigma^u_t the unit-mass
// problem is convex and the mass has the same closed form as in UOT.

#include <vector>

#include "gudc/convexcore.hpp"
#include "gudc/gaussmeas.hpp"
#include "gudc/uot.hpp"

namespace gudc {

struct LinearSystem {
  Mat A;  // d x d, nonsingular
  Mat B;  // d x d'
  int horizon = 2;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int control_dim() const { return static_cast<int>(B.cols()); }
  void validate() const;
};

struct UDCProblem {
  LinearSystem system;
  UnbalancedGaussian alpha;
  UnbalancedGaussian beta;
  double gamma = 1.0;

  void validate() const;
  /// The endpoint data seen as a UOT problem; psi and the mass formula are shared.
  UOTProblem endpoints() const { return {alpha, beta, gamma}; }
};

/// States t = 1..T are stored at index t-1, controls t = 1..T-1 likewise.
struct LiftedTrajectory {
  std::vector<Vec> means;           // m_t, T entries
  std::vector<Mat> covs;            // Sigma_t
  std::vector<Vec> feedforwards;    // v_t, T-1 entries
  std::vector<Mat> cross;           // S_t = Cov(u_t, x_t), d' x d
  std::vector<Mat> control_second;  // Y_t

  int horizon() const { return static_cast<int>(means.size()); }
};

/// u_t = K_t (x_t - m_t) + v_t + w_t,  w_t ~ N(0, Sigma^u_t).
struct AffinePolicy {
  std::vector<Mat> gains;
  std::vector<Vec> feedforwards;
  std::vector<Vec> anchors;
  std::vector<Mat> noise_covs;

  int steps() const { return static_cast<int>(gains.size()); }
};

struct UDCSolution {
  double mass = 0.0;
  LiftedTrajectory trajectory;
  AffinePolicy policy;
  double p_star = 0.0;
  double objective = 0.0;  // c* p* + psi(c*)
  convex::SolveReport report;
};

struct CovarianceSteering {
  LiftedTrajectory trajectory;
  double p_star = 0.0;
  convex::SolveReport report;
};

/// Unit-mass convex subproblem in the lifted variables.
CovarianceSteering solve_covariance_steering(const UDCProblem& problem,
                                             const convex::SolverConfig& config = {});

/// Unit-mass objective sum_t (|v_t|^2 + tr Y_t) + endpoint terms at a lifted point.
double steering_objective(const LiftedTrajectory& traj, const UDCProblem& problem);

/// K_t = S_t Sigma_t^+, Sigma^u_t = Y_t - S_t Sigma_t^+ S_t^T.
AffinePolicy recover_policy(const LiftedTrajectory& traj);

double optimal_mass_udc(double p_star, const UDCProblem& problem);

UDCSolution solve_udc(const UDCProblem& problem, const convex::SolverConfig& config = {});

/// J2 of the Gaussian initial measure driven by an affine policy, from exact
/// moments. With epsilon > 0 the entropy reward -epsilon c sum_t H(N(0, Sigma^u_t)) is added.
double policy_objective(const UDCProblem& problem, const UnbalancedGaussian& initial,
                        const AffinePolicy& policy, double epsilon = 0.0);

enum class Verdict { Certified, NotCertified, NotApplicable };

/// Per-step ||Y_t - S_t Sigma_t^{-1} S_t^T||_F. Certified means every residual
/// is at most tol; NotApplicable when some Sigma_t is not positive definite.
struct SchurCertificate {
  std::vector<double> residuals;
  Verdict verdict = Verdict::NotApplicable;

  double max_residual() const;
};

SchurCertificate schur_certificate(const LiftedTrajectory& traj, double tol);

/// Certified means the optimal policy is deterministic (Sigma^u_t = O).
SchurCertificate check_deterministic(const LiftedTrajectory& traj, double tol = 1e-6);

/// First and second moments of a (possibly non-Gaussian) controlled process.
struct ProcessMoments {
  double mass = 1.0;
  std::vector<Vec> state_means;    // T
  std::vector<Mat> state_covs;     // T
  std::vector<Vec> control_means;  // T-1
  std::vector<Mat> control_covs;   // Cov(u_t)
  std::vector<Mat> control_state;  // Lambda_t = Cov(u_t, x_t), d' x d
};

struct GaussianizedProcess {
  UnbalancedGaussian initial;
  AffinePolicy policy;
};

/// Gaussian initial measure and Gaussian-affine policy with the same moments.
/// Throws NonPSDMoments when some [[Cov(u), Lambda], [Lambda^T, Sigma]] is indefinite.
GaussianizedProcess moment_match_policy(const ProcessMoments& moments);

}  // namespace gudc
