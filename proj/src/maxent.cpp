#include "gudc/maxent.hpp"

#include <cmath>

#include "steering.hpp"

namespace gudc {

void MaxEntUDCProblem::validate() const {
  base.validate();
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
}

MaxEntRelaxation solve_maxent_relaxation(const MaxEntUDCProblem& problem, const convex::SolverConfig& config) {
  problem.validate();
  detail::SteeringResult r = detail::solve_steering(problem.base, problem.epsilon, config);
  MaxEntRelaxation out;
  static_cast<LiftedTrajectory&>(out.trajectory) = std::move(r.trajectory);
  out.trajectory.noise_covs = std::move(r.noise_covs);
  out.p_star = r.value;
  out.report = r.report;
  return out;
}

double relaxation_objective(const MaxEntTrajectory& traj, const MaxEntUDCProblem& problem) {
  double value = steering_objective(traj, problem.base);
  for (const Mat& U : traj.noise_covs) value += U.trace() - problem.epsilon * gaussian_entropy(U);
  return value;
}

SchurCertificate verify_tightness(const MaxEntTrajectory& traj, double tol) {
  return schur_certificate(traj, tol);
}

MaxEntTrajectory transfer_slack(const MaxEntTrajectory& traj) {
  MaxEntTrajectory out = traj;
  for (int t = 0; t + 1 < traj.horizon(); ++t) {
    const Mat& S = traj.cross[t];
    const Mat tight = symmetrize(S * Eigen::LLT<Mat>(traj.covs[t]).solve(Mat(S.transpose())));
    out.noise_covs[t] = symmetrize(traj.noise_covs[t] + traj.control_second[t] - tight);
    out.control_second[t] = tight;
  }
  return out;
}

UDCSolution solve_maxent_udc(const MaxEntUDCProblem& problem, const convex::SolverConfig& config) {
  MaxEntRelaxation r = solve_maxent_relaxation(problem, config);
  const SchurCertificate cert = verify_tightness(r.trajectory, 1e-5);
  if (cert.verdict != Verdict::Certified) {
    throw Error(ErrorCode::TightnessViolation,
                "relaxation is not tight (residual " + std::to_string(cert.max_residual()) + ")");
  }
  UDCSolution out;
  out.p_star = r.p_star;
  out.mass = optimal_mass_udc(r.p_star, problem.base);
  out.objective = out.mass * r.p_star + uot_psi(out.mass, problem.base.endpoints());
  // The pseudo-inverse recovery leaves the (tiny) LMI slack in the noise, so
  // the policy reproduces the lifted moments exactly.
  out.policy = recover_policy(r.trajectory);
  for (int t = 0; t < out.policy.steps(); ++t) {
    out.policy.noise_covs[t] = symmetrize(out.policy.noise_covs[t] + r.trajectory.noise_covs[t]);
  }
  out.trajectory = std::move(r.trajectory);
  out.report = r.report;
  return out;
}

}  // namespace gudc
