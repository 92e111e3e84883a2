#pragma once

// Maximum-entropy UDC: the control cost gets the reward
// -epsilon c sum_t E[H(U_t(.|x_t))]. Gaussian-affine policies remain optimal,
// now with Sigma^u_t > O. Dropping the coupling Y_t = S_t Sigma_t^{-1} S_t^T + Sigma^u_t
// to an LMI gives a convex relaxation that is tight at every optimum.

#include <vector>

#include "gudc/udc.hpp"

namespace gudc {

struct MaxEntUDCProblem {
  UDCProblem base;
  double epsilon = 0.1;

  void validate() const;
};

struct MaxEntTrajectory : LiftedTrajectory {
  std::vector<Mat> noise_covs;  // Sigma^u_t, T-1 entries
};

struct MaxEntRelaxation {
  MaxEntTrajectory trajectory;
  double p_star = 0.0;
  convex::SolveReport report;
};

/// Unit-mass relaxation. p_star includes the Gaussian entropy constants, so
/// c p_star + psi(c) is the full objective.
MaxEntRelaxation solve_maxent_relaxation(const MaxEntUDCProblem& problem,
                                         const convex::SolverConfig& config = {});

/// Relaxation objective evaluated directly at a point.
double relaxation_objective(const MaxEntTrajectory& traj, const MaxEntUDCProblem& problem);

/// Certified means the relaxation is tight: Y_t = S_t Sigma_t^{-1} S_t^T.
SchurCertificate verify_tightness(const MaxEntTrajectory& traj, double tol = 1e-6);

/// Moves the slack Delta_t = Y_t - S_t Sigma_t^{-1} S_t^T into Sigma^u_t.
/// Dynamics and LMI are unchanged; the objective does not increase.
MaxEntTrajectory transfer_slack(const MaxEntTrajectory& traj);

/// Relaxation, tightness check at 1e-5, closed-form mass and the randomized
/// policy K_t = S_t Sigma_t^{-1} with noise Sigma^u_t. Throws TightnessViolation.
UDCSolution solve_maxent_udc(const MaxEntUDCProblem& problem, const convex::SolverConfig& config = {});

}  // namespace gudc
