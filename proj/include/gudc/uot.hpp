#pragma once

// Unbalanced optimal transport between unbalanced Gaussians with quadratic
// cost and KL marginal penalties:
//
//   min_pi  int |x2 - x1|^2 dpi + gamma KL(pi_1 || alpha) + gamma KL(pi_2 || beta).
//
// The optimum is a Gaussian plan c * N(.,.) supported on the graph of an
// affine map; the moments solve a small convex program and the mass has a
// closed form.

#include "gudc/convexcore.hpp"
#include "gudc/gaussmeas.hpp"

namespace gudc {

struct UOTProblem {
  UnbalancedGaussian alpha;
  UnbalancedGaussian beta;
  double gamma = 1.0;

  int dim() const { return alpha.dim(); }
  void validate() const;
};

/// c * N((mean1, mean2), [[cov1, cross], [cross^T, cov2]]); cross = Cov(x1, x2).
struct GaussianPlan {
  double mass = 0.0;
  Vec mean1, mean2;
  Mat cov1, cov2, cross;

  int dim() const { return static_cast<int>(mean1.size()); }
  Vec joint_mean() const;
  Mat joint_cov() const;
  UnbalancedGaussian marginal1() const { return {mass, mean1, cov1}; }
  UnbalancedGaussian marginal2() const { return {mass, mean2, cov2}; }
  /// mass * E|x2 - x1|^2.
  double transport_cost() const;
};

/// M(m1, m2) + C(S1, S2) of the unit-mass reduction.
double uot_inner_objective(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2,
                           const UOTProblem& problem);

/// psi(c) = c gamma/2 (log det Sa + log det Sb - 2d) + gamma phi_ca(c) + gamma phi_cb(c).
double uot_psi(double c, const UOTProblem& problem);

/// Closed-form minimizer of c * p_star + psi(c).
double optimal_mass(double p_star, const UOTProblem& problem);

/// d/dc [c * p_star + psi(c)].
double uot_mass_derivative(double c, double p_star, const UOTProblem& problem);

struct UOTSubproblemSolution {
  Vec m1, m2;
  Mat S1, S2;
  double value = 0.0;
  convex::SolveReport report;
};

UOTSubproblemSolution solve_uot_subproblem(const UOTProblem& problem,
                                           const convex::SolverConfig& config = {});

struct UOTSolution {
  GaussianPlan plan;
  AffineMap map;
  double inner_value = 0.0;  // p*
  double objective = 0.0;    // c* p* + psi(c*)
  convex::SolveReport report;
};

UOTSolution solve_uot(const UOTProblem& problem, const convex::SolverConfig& config = {});

/// Transport cost plus gamma-weighted unbalanced KL of both marginals,
/// evaluated directly from the plan moments.
double uot_plan_objective(const GaussianPlan& plan, const UOTProblem& problem);

}  // namespace gudc
