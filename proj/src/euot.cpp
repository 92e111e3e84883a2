#include "gudc/euot.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gudc {

void EUOTProblem::validate() const {
  base.validate();
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
}

double euot_mean_term(const Vec& m1, const Vec& m2, const EUOTProblem& p) {
  const double w = 0.5 * (p.sigma + p.base.gamma);
  const Vec da = m1 - p.base.alpha.mean, db = m2 - p.base.beta.mean;
  return (m2 - m1).squaredNorm() + w * da.dot(Eigen::LLT<Mat>(p.base.alpha.cov).solve(da)) +
         w * db.dot(Eigen::LLT<Mat>(p.base.beta.cov).solve(db));
}

double euot_cov_term(const Mat& S1, const Mat& S2, const Mat& S3, const EUOTProblem& p) {
  const Eigen::LLT<Mat> l1(symmetrize(S1));
  if (l1.info() != Eigen::Success || !is_positive_definite(S1)) {
    throw Error(ErrorCode::DomainViolation, "S1 must be positive definite");
  }
  const Mat schur = symmetrize(S2 - S3.transpose() * l1.solve(S3));
  if (!is_positive_definite(schur)) throw Error(ErrorCode::DomainViolation, "Schur complement is not positive definite");
  if (!is_positive_definite(S2)) throw Error(ErrorCode::DomainViolation, "S2 must be positive definite");
  const double s = p.sigma, g = p.base.gamma;
  const double ta = Eigen::LLT<Mat>(p.base.alpha.cov).solve(S1).trace();
  const double tb = Eigen::LLT<Mat>(p.base.beta.cov).solve(S2).trace();
  return S1.trace() + S2.trace() - 2.0 * S3.trace() + 0.5 * (s + g) * (ta + tb - log_det(S1)) -
         0.5 * s * log_det(schur) - 0.5 * g * log_det(S2);
}

double euot_psi(double c, const EUOTProblem& p) {
  const double s = p.sigma, g = p.base.gamma, d = p.dim();
  const double ca = p.base.alpha.mass, cb = p.base.beta.mass;
  const double L = log_det(p.base.alpha.cov) + log_det(p.base.beta.cov) - 2.0 * std::log(ca * cb);
  const double clogc = c > 0.0 ? c * (std::log(c) - 1.0) : 0.0;
  return (s + 2.0 * g) * clogc - c * d * (s + g) + 0.5 * c * (s + g) * L + s * ca * cb + g * (ca + cb);
}

double euot_psi_derivative(double c, const EUOTProblem& p) {
  const double s = p.sigma, g = p.base.gamma, d = p.dim();
  const double L = log_det(p.base.alpha.cov) + log_det(p.base.beta.cov) -
                   2.0 * std::log(p.base.alpha.mass * p.base.beta.mass);
  return (s + 2.0 * g) * std::log(c) - d * (s + g) + 0.5 * (s + g) * L;
}

double euot_objective(double c, const Vec& m1, const Vec& m2, const Mat& S1, const Mat& S2, const Mat& S3,
                      const EUOTProblem& p) {
  if (!(c > 0.0)) throw Error(ErrorCode::InvalidArgument, "mass must be positive");
  return c * euot_mean_term(m1, m2, p) + c * euot_cov_term(S1, S2, S3, p) + euot_psi(c, p);
}

double euot_plan_objective(const GaussianPlan& plan, const EUOTProblem& p) {
  const int d = p.dim();
  UnbalancedGaussian product;
  product.mass = p.base.alpha.mass * p.base.beta.mass;
  product.mean.resize(2 * d);
  product.mean << p.base.alpha.mean, p.base.beta.mean;
  product.cov = Mat::Zero(2 * d, 2 * d);
  product.cov.topLeftCorner(d, d) = p.base.alpha.cov;
  product.cov.bottomRightCorner(d, d) = p.base.beta.cov;
  const UnbalancedGaussian joint{plan.mass, plan.joint_mean(), plan.joint_cov()};
  return uot_plan_objective(plan, p.base) + p.sigma * kl_unbalanced_gaussian(joint, product);
}

double euot_optimal_mass(double q, const EUOTProblem& p, double tol, int* iterations) {
  const auto h = [&](double u) { return q + euot_psi_derivative(std::exp(u), p); };
  double lo = std::log(1e-12), hi = std::log(1e6);
  double hlo = h(lo), hhi = h(hi);
  if (!(hlo < 0.0 && hhi > 0.0)) {
    throw Error(ErrorCode::OuterBracketFailure, "mass derivative does not change sign on [1e-12, 1e6]");
  }
  // h is increasing in u = log c with slope c * f''(c) = sigma + 2 gamma.
  const double slope = p.sigma + 2.0 * p.base.gamma;
  double u = 0.5 * (lo + hi);
  int it = 0;
  for (; it < 200; ++it) {
    const double hu = h(u);
    if (std::abs(hu) <= tol) break;
    if (hu < 0.0) lo = u; else hi = u;
    double next = u - hu / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-15) break;
    u = next;
  }
  if (iterations) *iterations = it + 1;
  return std::exp(u);
}

namespace {

struct EUOTProgram {
  convex::ConvexProgram prog;
  convex::VarId m1, m2, Z;
};

EUOTProgram build_program(const EUOTProblem& problem, double s) {
  const int d = problem.dim();
  const double g = problem.base.gamma;
  const Mat I = Mat::Identity(d, d);
  const Mat Ainv = Eigen::LLT<Mat>(problem.base.alpha.cov).solve(I);
  const Mat Binv = Eigen::LLT<Mat>(problem.base.beta.cov).solve(I);

  EUOTProgram out;
  convex::ConvexProgram& prog = out.prog;
  out.m1 = prog.add_vector("m1", d);
  out.m2 = prog.add_vector("m2", d);
  out.Z = prog.add_symmetric("Z", 2 * d);
  const auto m1 = prog.expr(out.m1), m2 = prog.expr(out.m2), Z = prog.expr(out.Z);
  prog.add_squared_norm(m2 - m1, 1.0);
  prog.add_mean_quadratic(m1, problem.base.alpha.mean, 0.5 * (s + g) * Ainv);
  prog.add_mean_quadratic(m2, problem.base.beta.mean, 0.5 * (s + g) * Binv);

  // tr S1 + tr S2 - 2 tr S3 + (s+g)/2 (tr(Sa^-1 S1) + tr(Sb^-1 S2)) as tr(C Z).
  Mat C(2 * d, 2 * d);
  C << I + 0.5 * (s + g) * Ainv, -I, -I, I + 0.5 * (s + g) * Binv;
  prog.add_trace_linear(Z, C);
  // -(s+g)/2 log det S1 - s/2 log det(Schur) - g/2 log det S2
  //   = -g/2 log det S1 - g/2 log det S2 - s/2 log det Z.
  Mat E1 = Mat::Zero(2 * d, d), E2 = Mat::Zero(2 * d, d);
  E1.topRows(d) = I;
  E2.bottomRows(d) = I;
  prog.add_neg_log_det(Z, 0.5 * s);
  prog.add_neg_log_det(Mat(E1.transpose()) * Z * E1, 0.5 * g);
  prog.add_neg_log_det(Mat(E2.transpose()) * Z * E2, 0.5 * g);
  return out;
}

}  // namespace

EUOTSolution solve_euot(const EUOTProblem& problem, const convex::SolverConfig& config) {
  problem.validate();
  const int d = problem.dim();

  // Small sigma makes -s/2 log det Z a weak barrier and Newton crawls from a
  // cold start, so sigma is lowered from 1e-2 by factors of 10 with warm starts.
  std::vector<double> schedule;
  for (double s = std::max(problem.sigma, 1e-2); s > problem.sigma; s /= 10.0) schedule.push_back(s);
  schedule.push_back(problem.sigma);

  Vec m1 = problem.base.alpha.mean, m2 = problem.base.beta.mean;
  Mat Z = Mat::Zero(2 * d, 2 * d);
  Z.topLeftCorner(d, d) = symmetrize(problem.base.alpha.cov);
  Z.bottomRightCorner(d, d) = symmetrize(problem.base.beta.cov);
  convex::SolveReport report;
  int iterations = 0;
  for (double s : schedule) {
    EUOTProgram ep = build_program(problem, s);
    convex::Assignment start = ep.prog.zeros();
    start[ep.m1] = m1;
    start[ep.m2] = m2;
    start[ep.Z] = Z;
    const convex::Solution sol = convex::minimize(ep.prog, start, config);
    iterations += sol.report.iterations;
    report = sol.report;
    m1 = sol.values.vector(ep.m1);
    m2 = sol.values.vector(ep.m2);
    Z = sol.values[ep.Z];
    if (report.status != convex::SolveStatus::Optimal) break;
  }
  report.iterations = iterations;

  EUOTSolution out;
  out.report = report;
  out.inner_value = report.objective_value;
  int outer = 0;
  const double c = euot_optimal_mass(out.inner_value, problem, 1e-10, &outer);
  out.outer_iterations = outer;
  out.mass_derivative = out.inner_value + euot_psi_derivative(c, problem);
  out.plan.mass = c;
  out.plan.mean1 = m1;
  out.plan.mean2 = m2;
  out.plan.cov1 = Z.topLeftCorner(d, d);
  out.plan.cov2 = Z.bottomRightCorner(d, d);
  out.plan.cross = Z.topRightCorner(d, d);
  out.objective = c * out.inner_value + euot_psi(c, problem);
  return out;
}

}  // namespace gudc
