#pragma once

// Entropic UOT: the UOT objective plus sigma * KL(pi || alpha x beta). The
// optimal plan is Gaussian with a non-degenerate joint covariance; its cross
// block stays a decision variable of the inner convex program and the mass is
// found by a one-dimensional Newton solve.

#include "gudc/uot.hpp"

namespace gudc {

struct EUOTProblem {
  UOTProblem base;
  double sigma = 0.1;

  int dim() const { return base.dim(); }
  void validate() const;
};

/// Mbar(m1, m2) for the unit-mass reduction.
double euot_mean_term(const Vec& m1, const Vec& m2, const EUOTProblem& problem);

/// Cbar(S1, S2, S3). Throws DomainViolation unless S1 and the Schur
/// complement S2 - S3^T S1^{-1} S3 are positive definite.
double euot_cov_term(const Mat& S1, const Mat& S2, const Mat& S3, const EUOTProblem& problem);

/// psibar(c), the mass-only part of the objective.
double euot_psi(double c, const EUOTProblem& problem);
double euot_psi_derivative(double c, const EUOTProblem& problem);

/// c Mbar + c Cbar + psibar(c).
double euot_objective(double c, const Vec& m1, const Vec& m2, const Mat& S1, const Mat& S2, const Mat& S3,
                      const EUOTProblem& problem);

/// Transport cost + sigma KL(pi || alpha x beta) + gamma KL(pi_1 || alpha) + gamma KL(pi_2 || beta)
/// evaluated from the plan moments with the generic Gaussian KL.
double euot_plan_objective(const GaussianPlan& plan, const EUOTProblem& problem);

struct EUOTSolution {
  GaussianPlan plan;
  double inner_value = 0.0;       // q*, minimum of Mbar + Cbar
  double objective = 0.0;         // c* q* + psibar(c*)
  double mass_derivative = 0.0;   // residual of the outer solve
  int outer_iterations = 0;
  convex::SolveReport report;
};

/// Minimizer of c * q + psibar(c) over c in [1e-12, 1e6] by safeguarded Newton
/// in log c. Throws OuterBracketFailure when the derivative does not change sign.
double euot_optimal_mass(double q, const EUOTProblem& problem, double tol = 1e-10, int* iterations = nullptr);

EUOTSolution solve_euot(const EUOTProblem& problem, const convex::SolverConfig& config = {});

}  // namespace gudc
