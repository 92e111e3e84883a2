#pragma once

// Shared builder for the lifted covariance-steering program. With a positive
// entropy weight the control noise Sigma^u_t becomes an explicit variable
// carrying tr(Sigma^u_t) - (eps/2) log det Sigma^u_t.

#include <vector>

#include "gudc/convexcore.hpp"
#include "gudc/udc.hpp"

namespace gudc::detail {

struct SteeringResult {
  LiftedTrajectory trajectory;
  std::vector<Mat> noise_covs;  // empty without entropy
  double value = 0.0;           // includes the entropy constant
  convex::SolveReport report;
};

SteeringResult solve_steering(const UDCProblem& problem, double epsilon,
                              const convex::SolverConfig& config);

/// Per-step entropy constant -(eps/2) d' log(2 pi e) summed over the horizon.
double entropy_constant(const UDCProblem& problem, double epsilon);

}  // namespace gudc::detail
