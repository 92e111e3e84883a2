#include "gudc/uot.hpp"

#include <cmath>

namespace gudc {

void UOTProblem::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::InvalidArgument, "gamma must be positive");
  alpha.validate(true);
  beta.validate(true);
  if (alpha.dim() != beta.dim()) throw Error(ErrorCode::DimensionMismatch, "alpha and beta differ in dimension");
}

Vec GaussianPlan::joint_mean() const {
  Vec m(2 * dim());
  m << mean1, mean2;
  return m;
}

Mat GaussianPlan::joint_cov() const {
  const int d = dim();
  Mat Z(2 * d, 2 * d);
  Z << cov1, cross, cross.transpose(), cov2;
  return Z;
}

double GaussianPlan::transport_cost() const {
  return mass * ((mean2 - mean1).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross.trace());
}

double uot_inner_objective(const Vec& m1, const Mat& S1, const Vec& m2, const Mat& S2,
                           const UOTProblem& p) {
  if (!is_positive_definite(S1) || !is_positive_definite(S2)) {
    throw Error(ErrorCode::SingularCovariance, "inner objective needs positive definite covariances");
  }
  const double g = p.gamma;
  const Eigen::LLT<Mat> la(p.alpha.cov), lb(p.beta.cov);
  const Vec da = m1 - p.alpha.mean, db = m2 - p.beta.mean;
  const double M = (m2 - m1).squaredNorm() + 0.5 * g * da.dot(la.solve(da)) + 0.5 * g * db.dot(lb.solve(db));
  const double C = -2.0 * trace_sqrt_coupling(S1, S2) + 0.5 * g * lb.solve(S2).trace() -
                   0.5 * g * log_det(S2) + S2.trace() + 0.5 * g * la.solve(S1).trace() -
                   0.5 * g * log_det(S1) + S1.trace();
  return M + C;
}

namespace {

double log_det_sum(const UOTProblem& p) {
  return log_det(p.alpha.cov) + log_det(p.beta.cov) - 2.0 * p.dim();
}

}  // namespace

double uot_psi(double c, const UOTProblem& p) {
  return 0.5 * c * p.gamma * log_det_sum(p) + p.gamma * mass_divergence(c, p.alpha.mass) +
         p.gamma * mass_divergence(c, p.beta.mass);
}

double optimal_mass(double p_star, const UOTProblem& p) {
  return std::sqrt(p.alpha.mass * p.beta.mass) * std::exp(-p_star / (2.0 * p.gamma) - 0.25 * log_det_sum(p));
}

double uot_mass_derivative(double c, double p_star, const UOTProblem& p) {
  return p_star + 0.5 * p.gamma * log_det_sum(p) + p.gamma * std::log(c / p.alpha.mass) +
         p.gamma * std::log(c / p.beta.mass);
}

UOTSubproblemSolution solve_uot_subproblem(const UOTProblem& problem, const convex::SolverConfig& config) {
  problem.validate();
  using convex::VarId;
  const int d = problem.dim();
  const double g = problem.gamma;
  const Mat I = Mat::Identity(d, d);
  const Mat Ainv = Eigen::LLT<Mat>(problem.alpha.cov).solve(I);
  const Mat Binv = Eigen::LLT<Mat>(problem.beta.cov).solve(I);

  convex::ConvexProgram prog;
  const VarId m1 = prog.add_vector("m1", d);
  const VarId m2 = prog.add_vector("m2", d);
  const VarId S1 = prog.add_symmetric("S1", d);
  const VarId S2 = prog.add_symmetric("S2", d);
  prog.add_squared_norm(prog.expr(m2) - prog.expr(m1), 1.0);
  prog.add_mean_quadratic(prog.expr(m1), problem.alpha.mean, 0.5 * g * Ainv);
  prog.add_mean_quadratic(prog.expr(m2), problem.beta.mean, 0.5 * g * Binv);
  prog.add_trace_linear(prog.expr(S1), I + 0.5 * g * Ainv);
  prog.add_trace_linear(prog.expr(S2), I + 0.5 * g * Binv);
  prog.add_neg_log_det(prog.expr(S1), 0.5 * g);
  prog.add_neg_log_det(prog.expr(S2), 0.5 * g);
  prog.add_trace_sqrt_coupling(S1, S2, 2.0);

  convex::Assignment start = prog.zeros();
  start[m1] = problem.alpha.mean;
  start[m2] = problem.beta.mean;
  start[S1] = symmetrize(problem.alpha.cov);
  start[S2] = symmetrize(problem.beta.cov);
  const convex::Solution sol = convex::minimize(prog, start, config);

  UOTSubproblemSolution out;
  out.m1 = sol.values.vector(m1);
  out.m2 = sol.values.vector(m2);
  out.S1 = sol.values[S1];
  out.S2 = sol.values[S2];
  out.value = sol.report.objective_value;
  out.report = sol.report;
  return out;
}

UOTSolution solve_uot(const UOTProblem& problem, const convex::SolverConfig& config) {
  const UOTSubproblemSolution sub = solve_uot_subproblem(problem, config);
  UOTSolution out;
  out.report = sub.report;
  out.inner_value = sub.value;
  const double c = optimal_mass(sub.value, problem);
  out.map = optimal_affine_map(sub.m1, sub.S1, sub.m2, sub.S2);
  out.plan.mass = c;
  out.plan.mean1 = sub.m1;
  out.plan.mean2 = sub.m2;
  out.plan.cov1 = sub.S1;
  out.plan.cov2 = sub.S2;
  out.plan.cross = sub.S1 * out.map.linear.transpose();
  out.objective = c * sub.value + uot_psi(c, problem);
  return out;
}

double uot_plan_objective(const GaussianPlan& plan, const UOTProblem& problem) {
  return plan.transport_cost() + problem.gamma * kl_unbalanced_gaussian(plan.marginal1(), problem.alpha) +
         problem.gamma * kl_unbalanced_gaussian(plan.marginal2(), problem.beta);
}

}  // namespace gudc
