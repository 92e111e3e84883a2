#include "gudc/udc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gudc/sim.hpp"
#include "steering.hpp"

namespace gudc {

void LinearSystem::validate() const {
  if (A.rows() == 0 || A.rows() != A.cols()) throw Error(ErrorCode::DimensionMismatch, "A must be square");
  if (B.rows() != A.rows() || B.cols() == 0) throw Error(ErrorCode::DimensionMismatch, "B must have d rows");
  if (!A.allFinite() || !B.allFinite()) throw Error(ErrorCode::InvalidArgument, "system matrices must be finite");
  if (horizon < 2) throw Error(ErrorCode::InvalidArgument, "horizon must be at least 2");
  if (!(std::abs(A.determinant()) > 1e-12)) throw Error(ErrorCode::InvalidArgument, "A must be nonsingular");
}

void UDCProblem::validate() const {
  system.validate();
  endpoints().validate();
  if (alpha.dim() != system.state_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "references and system differ in dimension");
  }
}

namespace detail {

double entropy_constant(const UDCProblem& problem, double epsilon) {
  if (epsilon <= 0.0) return 0.0;
  const double du = problem.system.control_dim();
  return -0.5 * epsilon * du * std::log(2.0 * std::numbers::pi * std::numbers::e) *
         (problem.system.horizon - 1);
}

namespace {

struct SteeringVars {
  std::vector<convex::VarId> m, Sig, v, S, Y, U;
};

// Strictly feasible start from a contracting gain K = -kappa B^+ A.
void feasible_start(const UDCProblem& problem, double epsilon, const SteeringVars& vars,
                    convex::Assignment& start) {
  const LinearSystem& sys = problem.system;
  const int T = sys.horizon, du = sys.control_dim();
  const double rho = 0.1;
  const Mat Bp = sys.B.completeOrthogonalDecomposition().pseudoInverse();
  const Mat Iu = Mat::Identity(du, du);
  const Mat noise = epsilon > 0.0 ? Mat(2.0 * rho * Iu) : Mat(rho * Iu);

  double best_score = std::numeric_limits<double>::infinity();
  double best_kappa = 0.0;
  for (double kappa : {0.0, 0.25, 0.5, 0.75, 0.9}) {
    const Mat K = -kappa * Bp * sys.A;
    const Mat F = sys.A + sys.B * K;
    Vec m = problem.alpha.mean;
    Mat S = problem.alpha.cov;
    double score = 0.0;
    for (int t = 1; t < T; ++t) {
      m = F * m;
      S = symmetrize(F * S * F.transpose() + sys.B * noise * sys.B.transpose());
      score = std::max(score, S.norm() + m.squaredNorm());
    }
    if (std::isfinite(score) && score < best_score) {
      best_score = score;
      best_kappa = kappa;
    }
  }

  const Mat K = -best_kappa * Bp * sys.A;
  const Mat F = sys.A + sys.B * K;
  Vec m = problem.alpha.mean;
  Mat S = symmetrize(problem.alpha.cov);
  for (int t = 0; t < T; ++t) {
    start[vars.m[t]] = m;
    start[vars.Sig[t]] = S;
    if (t == T - 1) break;
    start[vars.v[t]] = K * m;
    start[vars.S[t]] = K * S;
    start[vars.Y[t]] = symmetrize(K * S * K.transpose() + rho * Iu);
    if (epsilon > 0.0) start[vars.U[t]] = rho * Iu;
    m = F * m;
    S = symmetrize(F * S * F.transpose() + sys.B * noise * sys.B.transpose());
  }
}

}  // namespace

SteeringResult solve_steering(const UDCProblem& problem, double epsilon,
                              const convex::SolverConfig& config) {
  problem.validate();
  const LinearSystem& sys = problem.system;
  const int T = sys.horizon, d = sys.state_dim(), du = sys.control_dim();
  const double g = problem.gamma;
  const Mat I = Mat::Identity(d, d), Iu = Mat::Identity(du, du);
  const Mat Ainv = Eigen::LLT<Mat>(problem.alpha.cov).solve(I);
  const Mat Binv = Eigen::LLT<Mat>(problem.beta.cov).solve(I);
  const Mat& A = sys.A;
  const Mat& B = sys.B;
  const Mat At = A.transpose(), Bt = B.transpose();

  convex::ConvexProgram prog;
  SteeringVars vars;
  for (int t = 0; t < T; ++t) {
    vars.m.push_back(prog.add_vector("m" + std::to_string(t + 1), d));
    vars.Sig.push_back(prog.add_symmetric("Sigma" + std::to_string(t + 1), d));
  }
  for (int t = 0; t + 1 < T; ++t) {
    const std::string k = std::to_string(t + 1);
    vars.v.push_back(prog.add_vector("v" + k, du));
    vars.S.push_back(prog.add_matrix("S" + k, du, d));
    vars.Y.push_back(prog.add_symmetric("Y" + k, du));
    if (epsilon > 0.0) vars.U.push_back(prog.add_symmetric("Sigma_u" + k, du));
  }

  for (int t = 0; t + 1 < T; ++t) {
    const auto m = prog.expr(vars.m[t]), Sig = prog.expr(vars.Sig[t]);
    const auto v = prog.expr(vars.v[t]), S = prog.expr(vars.S[t]), Y = prog.expr(vars.Y[t]);
    prog.add_squared_norm(v, 1.0);
    prog.add_trace_linear(Y, Iu);
    prog.add_equality(prog.expr(vars.m[t + 1]) - A * m - B * v);
    auto next = prog.expr(vars.Sig[t + 1]) - A * Sig * At - B * S * At - A * S.transpose() * Bt - B * Y * Bt;
    if (epsilon > 0.0) {
      const auto U = prog.expr(vars.U[t]);
      prog.add_trace_linear(U, Iu);
      prog.add_neg_log_det(U, 0.5 * epsilon);
      next -= B * U * Bt;
    }
    prog.add_equality(next, true);
    const int n = du + d;
    prog.add_psd_constraint(convex::embed(Y, 0, 0, n, n) + convex::embed(S, 0, du, n, n) +
                            convex::embed(S.transpose(), du, 0, n, n) + convex::embed(Sig, du, du, n, n));
  }
  const auto m1 = prog.expr(vars.m.front()), mT = prog.expr(vars.m.back());
  const auto S1 = prog.expr(vars.Sig.front()), ST = prog.expr(vars.Sig.back());
  prog.add_mean_quadratic(m1, problem.alpha.mean, 0.5 * g * Ainv);
  prog.add_mean_quadratic(mT, problem.beta.mean, 0.5 * g * Binv);
  prog.add_trace_linear(S1, 0.5 * g * Ainv);
  prog.add_trace_linear(ST, 0.5 * g * Binv);
  prog.add_neg_log_det(S1, 0.5 * g);
  prog.add_neg_log_det(ST, 0.5 * g);

  convex::Assignment start = prog.zeros();
  feasible_start(problem, epsilon, vars, start);
  const convex::Solution sol = convex::minimize(prog, start, config);

  SteeringResult out;
  out.report = sol.report;
  out.value = sol.report.objective_value + entropy_constant(problem, epsilon);
  out.report.objective_value = out.value;
  LiftedTrajectory& tr = out.trajectory;
  for (int t = 0; t < T; ++t) {
    tr.means.push_back(sol.values.vector(vars.m[t]));
    tr.covs.push_back(sol.values[vars.Sig[t]]);
  }
  for (int t = 0; t + 1 < T; ++t) {
    tr.feedforwards.push_back(sol.values.vector(vars.v[t]));
    tr.cross.push_back(sol.values[vars.S[t]]);
    tr.control_second.push_back(sol.values[vars.Y[t]]);
    if (epsilon > 0.0) out.noise_covs.push_back(sol.values[vars.U[t]]);
  }
  return out;
}

}  // namespace detail

CovarianceSteering solve_covariance_steering(const UDCProblem& problem, const convex::SolverConfig& config) {
  detail::SteeringResult r = detail::solve_steering(problem, 0.0, config);
  return {std::move(r.trajectory), r.value, r.report};
}

double steering_objective(const LiftedTrajectory& traj, const UDCProblem& problem) {
  const int T = traj.horizon();
  double control = 0.0;
  for (int t = 0; t + 1 < T; ++t) control += traj.feedforwards[t].squaredNorm() + traj.control_second[t].trace();
  const auto endpoint = [&](const Vec& m, const Mat& S, const UnbalancedGaussian& ref) {
    const Eigen::LLT<Mat> l(ref.cov);
    const Vec dm = m - ref.mean;
    return 0.5 * problem.gamma * (dm.dot(l.solve(dm)) + l.solve(S).trace() - log_det(S));
  };
  return control + endpoint(traj.means.front(), traj.covs.front(), problem.alpha) +
         endpoint(traj.means.back(), traj.covs.back(), problem.beta);
}

AffinePolicy recover_policy(const LiftedTrajectory& traj) {
  AffinePolicy policy;
  for (int t = 0; t + 1 < traj.horizon(); ++t) {
    const Mat pinv = psd_pseudo_inverse(symmetrize(traj.covs[t]));
    const Mat& S = traj.cross[t];
    policy.gains.push_back(S * pinv);
    policy.feedforwards.push_back(traj.feedforwards[t]);
    policy.anchors.push_back(traj.means[t]);
    policy.noise_covs.push_back(symmetrize(traj.control_second[t] - S * pinv * S.transpose()));
  }
  return policy;
}

double optimal_mass_udc(double p_star, const UDCProblem& problem) {
  return optimal_mass(p_star, problem.endpoints());
}

UDCSolution solve_udc(const UDCProblem& problem, const convex::SolverConfig& config) {
  CovarianceSteering cs = solve_covariance_steering(problem, config);
  UDCSolution out;
  out.p_star = cs.p_star;
  out.mass = optimal_mass_udc(cs.p_star, problem);
  out.objective = out.mass * cs.p_star + uot_psi(out.mass, problem.endpoints());
  out.policy = recover_policy(cs.trajectory);
  out.trajectory = std::move(cs.trajectory);
  out.report = cs.report;
  return out;
}

double policy_objective(const UDCProblem& problem, const UnbalancedGaussian& initial,
                        const AffinePolicy& policy, double epsilon) {
  const MomentSequence ms = propagate_moments(problem.system, policy, initial);
  const double c = initial.mass;
  double control = 0.0, entropy = 0.0;
  for (int t = 0; t < policy.steps(); ++t) {
    const Mat& K = policy.gains[t];
    const Vec u = K * (ms.means[t] - policy.anchors[t]) + policy.feedforwards[t];
    control += u.squaredNorm() + (K * ms.covs[t] * K.transpose()).trace() + policy.noise_covs[t].trace();
    if (epsilon > 0.0) entropy += gaussian_entropy(policy.noise_covs[t]);
  }
  const UnbalancedGaussian last{c, ms.means.back(), ms.covs.back()};
  return c * control - epsilon * c * entropy + problem.gamma * kl_unbalanced_gaussian(initial, problem.alpha) +
         problem.gamma * kl_unbalanced_gaussian(last, problem.beta);
}

double SchurCertificate::max_residual() const {
  double m = 0.0;
  for (double r : residuals) m = std::max(m, r);
  return m;
}

SchurCertificate schur_certificate(const LiftedTrajectory& traj, double tol) {
  SchurCertificate out;
  for (const Mat& S : traj.covs) {
    if (!is_positive_definite(S)) return out;
  }
  bool ok = true;
  for (int t = 0; t + 1 < traj.horizon(); ++t) {
    const Mat& S = traj.cross[t];
    const Mat gap = traj.control_second[t] - S * Eigen::LLT<Mat>(traj.covs[t]).solve(Mat(S.transpose()));
    out.residuals.push_back(gap.norm());
    ok = ok && gap.norm() <= tol;
  }
  out.verdict = ok ? Verdict::Certified : Verdict::NotCertified;
  return out;
}

SchurCertificate check_deterministic(const LiftedTrajectory& traj, double tol) {
  return schur_certificate(traj, tol);
}

GaussianizedProcess moment_match_policy(const ProcessMoments& mo) {
  const std::size_t T = mo.state_means.size();
  if (T < 2 || mo.state_covs.size() != T || mo.control_means.size() != T - 1 ||
      mo.control_covs.size() != T - 1 || mo.control_state.size() != T - 1) {
    throw Error(ErrorCode::DimensionMismatch, "moment sequences have inconsistent lengths");
  }
  GaussianizedProcess out;
  out.initial = {mo.mass, mo.state_means[0], symmetrize(mo.state_covs[0])};
  if (min_eigenvalue(out.initial.cov) < -1e-9 * std::max(1.0, out.initial.cov.norm())) {
    throw Error(ErrorCode::NonPSDMoments, "initial covariance is indefinite");
  }
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Mat Sx = symmetrize(mo.state_covs[t]);
    const Mat Su = symmetrize(mo.control_covs[t]);
    const Mat& L = mo.control_state[t];
    const int d = static_cast<int>(Sx.rows()), du = static_cast<int>(Su.rows());
    if (L.rows() != du || L.cols() != d) throw Error(ErrorCode::DimensionMismatch, "cross moment has wrong shape");
    Mat joint(du + d, du + d);
    joint << Su, L, L.transpose(), Sx;
    if (min_eigenvalue(joint) < -1e-9 * std::max(1.0, joint.norm())) {
      throw Error(ErrorCode::NonPSDMoments, "joint control-state covariance is indefinite at t = " +
                                                std::to_string(t + 1));
    }
    const Mat pinv = psd_pseudo_inverse(Sx);
    out.policy.gains.push_back(L * pinv);
    out.policy.feedforwards.push_back(mo.control_means[t]);
    out.policy.anchors.push_back(mo.state_means[t]);
    out.policy.noise_covs.push_back(symmetrize(Su - L * pinv * L.transpose()));
  }
  return out;
}

}  // namespace gudc
