#include "run.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "gudc/euot.hpp"
#include "gudc/maxent.hpp"
#include "gudc/oracle.hpp"
#include "gudc/sim.hpp"
#include "gudc/udc.hpp"
#include "gudc/uot.hpp"

namespace cli {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gudc;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

namespace {

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

json to_json(const UnbalancedGaussian& g) { return {{"mass", g.mass}, {"mean", to_json(g.mean)}, {"cov", to_json(g.cov)}}; }

json to_json(const convex::SolveReport& r) {
  return {{"status", std::string(convex::to_string(r.status))},
          {"iterations", r.iterations},
          {"stationarity_residual", r.stationarity_residual},
          {"lagrangian_residual", r.lagrangian_residual},
          {"equality_residual", r.equality_residual},
          {"min_cone_eigenvalue", r.min_cone_eigenvalue},
          {"barrier_parameter_final", r.barrier_parameter_final}};
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Certified: return "certified";
    case Verdict::NotCertified: return "not_certified";
    case Verdict::NotApplicable: return "not_applicable";
  }
  return "?";
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row_strings(header);
  }
  void row(const std::vector<double>& values) {
    std::vector<std::string> s;
    s.reserve(values.size());
    for (double v : values) s.push_back(format_double(v));
    row_strings(s);
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

convex::SolverConfig solver_config(const ExperimentConfig& cfg) {
  convex::SolverConfig s;
  s.tol = cfg.tol;
  s.max_iter = cfg.max_iter;
  return s;
}

Grid1D marginal_grid(const ExperimentConfig& cfg) {
  const GridSpec& g = cfg.oracle.grid;
  return g.explicit_bounds ? Grid1D::uniform(g.lo, g.hi, g.n) : default_grid(cfg.alpha, cfg.beta, g.n);
}

void add_check(RunOutcome& out, json& report, const std::string& name, double value, double tol) {
  const Check c{name, value, tol, std::isfinite(value) && value <= tol};
  out.checks.push_back(c);
  report["checks"].push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"passed", c.passed}});
}

void write_marginals(const fs::path& dir, const Grid1D& grid, const UnbalancedGaussian& p1,
                     const UnbalancedGaussian& p2, const ExperimentConfig& cfg) {
  const Vec a = density_on_grid(cfg.alpha, grid), b = density_on_grid(cfg.beta, grid);
  const Vec d1 = density_on_grid(p1, grid), d2 = density_on_grid(p2, grid);
  Csv csv(dir / "marginals.csv", {"x", "pi1", "pi2", "alpha", "beta"});
  for (int i = 0; i < grid.n; ++i) csv.row({grid.points(i), d1(i), d2(i), a(i), b(i)});
}

// Density of a nondegenerate scalar plan on the product grid.
void write_plan_density(const fs::path& dir, const Grid1D& grid, const GaussianPlan& plan) {
  const Mat L = Eigen::LLT<Mat>(plan.joint_cov()).matrixL();
  const double ld = 2.0 * L.diagonal().array().log().sum();
  const Vec mean = plan.joint_mean();
  Csv csv(dir / "plan.csv", {"x1", "x2", "density"});
  Vec z(2);
  for (int i = 0; i < grid.n; ++i) {
    for (int j = 0; j < grid.n; ++j) {
      z << grid.points(i), grid.points(j);
      csv.row({z(0), z(1), plan.mass * std::exp(gaussian_log_density(z, mean, L, ld))});
    }
  }
}

std::vector<std::string> trajectory_header(int d, int du) {
  std::vector<std::string> h{"t"};
  for (int i = 0; i < d; ++i) h.push_back("m[" + std::to_string(i) + "]");
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) h.push_back("Sigma[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  for (int i = 0; i < du; ++i) h.push_back("v[" + std::to_string(i) + "]");
  for (int i = 0; i < du; ++i)
    for (int j = 0; j < d; ++j) h.push_back("K[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  h.push_back("trace_Y");
  h.push_back("trace_Sigma_u");
  return h;
}

// The last row has no control; its control columns are left empty.
void write_trajectory(const fs::path& dir, const UDCSolution& s, int d, int du) {
  const std::vector<std::string> header = trajectory_header(d, du);
  Csv csv(dir / "trajectory.csv", header);
  const int T = s.trajectory.horizon();
  for (int t = 0; t < T; ++t) {
    std::vector<std::string> row{std::to_string(t + 1)};
    for (int i = 0; i < d; ++i) row.push_back(format_double(s.trajectory.means[t](i)));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) row.push_back(format_double(s.trajectory.covs[t](i, j)));
    if (t + 1 < T) {
      for (int i = 0; i < du; ++i) row.push_back(format_double(s.policy.feedforwards[t](i)));
      for (int i = 0; i < du; ++i)
        for (int j = 0; j < d; ++j) row.push_back(format_double(s.policy.gains[t](i, j)));
      row.push_back(format_double(s.trajectory.control_second[t].trace()));
      row.push_back(format_double(s.policy.noise_covs[t].trace()));
    } else {
      row.resize(header.size());
    }
    csv.row_strings(row);
  }
}

void write_samples(const fs::path& dir, const TrajectoryEnsemble& ens) {
  std::vector<std::string> h{"path", "t"};
  for (int i = 0; i < ens.dim; ++i) h.push_back("x[" + std::to_string(i) + "]");
  Csv csv(dir / "samples.csv", h);
  for (int k = 0; k < ens.n_paths; ++k) {
    for (int t = 0; t < ens.horizon; ++t) {
      std::vector<std::string> row{std::to_string(k), std::to_string(t + 1)};
      const Vec x = ens.state(k, t);
      for (int i = 0; i < ens.dim; ++i) row.push_back(format_double(x(i)));
      csv.row_strings(row);
    }
  }
}

double relative(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

void run_uot(const ExperimentConfig& cfg, const RunParams& prm, const RunOptions& opts, const fs::path& dir,
             RunOutcome& out, json& report) {
  const UOTProblem problem{cfg.alpha, cfg.beta, prm.gamma};
  const UOTSolution s = solve_uot(problem, solver_config(cfg));
  out.status = std::string(convex::to_string(s.report.status));
  out.c_star = s.plan.mass;
  out.p_star = s.inner_value;
  out.objective = s.objective;
  report["solver"] = to_json(s.report);
  report["pi1"] = to_json(s.plan.marginal1());
  report["pi2"] = to_json(s.plan.marginal2());
  report["cross_cov"] = to_json(s.plan.cross);
  report["map"] = {{"linear", to_json(s.map.linear)}, {"offset", to_json(s.map.offset)}};
  add_check(out, report, "mass_stationarity", std::abs(uot_mass_derivative(s.plan.mass, s.inner_value, problem)), 1e-8);

  if (problem.dim() != 1) return;
  const Grid1D grid = marginal_grid(cfg);
  write_marginals(dir, grid, s.plan.marginal1(), s.plan.marginal2(), cfg);
  // The plan lives on the graph of the map: one row per source node.
  Csv plan(dir / "plan.csv", {"x1", "x2", "density"});
  const Vec d1 = density_on_grid(s.plan.marginal1(), grid);
  for (int i = 0; i < grid.n; ++i) plan.row({grid.points(i), s.map(Vec::Constant(1, grid.points(i)))(0), d1(i)});

  if (cfg.oracle.enabled || opts.force_oracle || opts.verify) {
    const GridPlan gp = grid_uot(cfg.alpha, cfg.beta, prm.gamma, grid, cfg.oracle.eps_schedule);
    const double err = relative(gp.value, s.objective);
    report["oracle"] = {{"kind", "grid_uot"},       {"grid_n", grid.n},          {"value", gp.value},
                        {"mass", gp.mass()},        {"relative_error", err},     {"residual", gp.residual},
                        {"dual_gap", gp.dual_gap},  {"iterations", gp.iterations}};
    add_check(out, report, "oracle_relative_error", err, 0.015);
  }
}

void run_euot(const ExperimentConfig& cfg, const RunParams& prm, const RunOptions& opts, const fs::path& dir,
              RunOutcome& out, json& report) {
  const EUOTProblem problem{{cfg.alpha, cfg.beta, prm.gamma}, prm.sigma};
  const EUOTSolution s = solve_euot(problem, solver_config(cfg));
  out.status = std::string(convex::to_string(s.report.status));
  out.c_star = s.plan.mass;
  out.p_star = s.inner_value;
  out.objective = s.objective;
  report["solver"] = to_json(s.report);
  report["pi1"] = to_json(s.plan.marginal1());
  report["pi2"] = to_json(s.plan.marginal2());
  report["cross_cov"] = to_json(s.plan.cross);
  add_check(out, report, "mass_stationarity", std::abs(s.mass_derivative), 1e-8);

  if (problem.dim() != 1) return;
  report["correlation"] = s.plan.cross(0, 0) / std::sqrt(s.plan.cov1(0, 0) * s.plan.cov2(0, 0));
  const Grid1D grid = marginal_grid(cfg);
  write_marginals(dir, grid, s.plan.marginal1(), s.plan.marginal2(), cfg);
  write_plan_density(dir, grid, s.plan);

  if (cfg.oracle.enabled || opts.force_oracle || opts.verify) {
    const GridPlan gp = grid_euot(cfg.alpha, cfg.beta, prm.gamma, prm.sigma, grid);
    const GaussianPlan m = grid_plan_moments(gp, grid);
    const double err = relative(gp.value, s.objective);
    report["oracle"] = {{"kind", "grid_euot"},
                        {"grid_n", grid.n},
                        {"value", gp.value},
                        {"mass", gp.mass()},
                        {"correlation", m.cross(0, 0) / std::sqrt(m.cov1(0, 0) * m.cov2(0, 0))},
                        {"relative_error", err},
                        {"residual", gp.residual},
                        {"iterations", gp.iterations}};
    add_check(out, report, "oracle_relative_error", err, 0.02);
    add_check(out, report, "oracle_fixed_point_residual", gp.residual, 1e-10);
  }
}

void run_control(const ExperimentConfig& cfg, const RunParams& prm, const RunOptions& opts, const fs::path& dir,
                 RunOutcome& out, json& report) {
  const UDCProblem problem{*cfg.system, cfg.alpha, cfg.beta, prm.gamma};
  const bool maxent = cfg.problem == ProblemKind::MaxEntUdc;
  const UDCSolution s = maxent ? solve_maxent_udc({problem, prm.epsilon}, solver_config(cfg))
                               : solve_udc(problem, solver_config(cfg));
  out.status = std::string(convex::to_string(s.report.status));
  out.c_star = s.mass;
  out.p_star = s.p_star;
  out.objective = s.objective;
  const int T = problem.system.horizon, d = problem.system.state_dim(), du = problem.system.control_dim();
  const UnbalancedGaussian first{s.mass, s.trajectory.means.front(), s.trajectory.covs.front()};
  const UnbalancedGaussian last{s.mass, s.trajectory.means.back(), s.trajectory.covs.back()};
  report["solver"] = to_json(s.report);
  report["pi1"] = to_json(first);
  report["piT"] = to_json(last);
  report["kl_initial"] = kl_unbalanced_gaussian(first, cfg.alpha);
  report["kl_terminal"] = kl_unbalanced_gaussian(last, cfg.beta);
  double noise = 0.0;
  for (const Mat& U : s.policy.noise_covs) noise += U.trace();
  report["total_noise_trace"] = noise;
  add_check(out, report, "mass_stationarity", std::abs(uot_mass_derivative(s.mass, s.p_star, problem.endpoints())),
            1e-8);
  if (maxent) {
    const SchurCertificate cert = schur_certificate(s.trajectory, 1e-6);
    report["tightness"] = {{"verdict", std::string(to_string(cert.verdict))}, {"max_residual", cert.max_residual()}};
    add_check(out, report, "tightness_residual", cert.max_residual(), 1e-6);
  } else {
    const SchurCertificate cert = check_deterministic(s.trajectory);
    report["deterministic"] = {{"verdict", std::string(to_string(cert.verdict))},
                               {"max_residual", cert.max_residual()}};
    if (cert.verdict != Verdict::NotApplicable) add_check(out, report, "deterministic_residual", cert.max_residual(), 1e-6);
  }

  write_trajectory(dir, s, d, du);
  if (d == 1) write_marginals(dir, marginal_grid(cfg), first, last, cfg);
  if (cfg.sampling.enabled) {
    const std::uint64_t seed = opts.seed_given ? opts.seed : cfg.sampling.seed;
    const TrajectoryEnsemble ens = sample_trajectories(problem.system, s.policy, first, cfg.sampling.n_paths, seed);
    write_samples(dir, ens);
    report["sampling"] = {{"n_paths", ens.n_paths}, {"seed", seed}, {"terminal_cov_trace", ens.sample_cov(T - 1).trace()}};
  }

  if (cfg.oracle.enabled || opts.force_oracle || opts.verify) {
    if (d <= 2 && T <= 4) {
      const MultistartResult ms =
          multistart_udc(problem, cfg.oracle.restarts, opts.seed_given ? opts.seed : cfg.sampling.seed, prm.epsilon);
      const double gap = std::abs(ms.best - s.objective);
      report["oracle"] = {{"kind", "multistart"}, {"restarts", cfg.oracle.restarts}, {"best", ms.best}, {"gap", gap}};
      add_check(out, report, "oracle_gap", gap, 1e-3);
    } else {
      report["oracle"] = {{"kind", "multistart"}, {"skipped", "instance too large (needs d <= 2, T <= 4)"}};
    }
  }
}

}  // namespace

std::string run_label(const ExperimentConfig& cfg, const RunParams& p) {
  std::string s = "gamma=" + format_double(p.gamma);
  if (cfg.problem == ProblemKind::Euot) s += "_sigma=" + format_double(p.sigma);
  if (cfg.problem == ProblemKind::MaxEntUdc) s += "_epsilon=" + format_double(p.epsilon);
  return s;
}

RunOutcome run_one(const ExperimentConfig& cfg, const RunParams& prm, const RunOptions& opts, const fs::path& dir) {
  fs::create_directories(dir);
  RunOutcome out;
  out.params = prm;
  json report = {{"problem", std::string(to_string(cfg.problem))}, {"gamma", prm.gamma}};
  if (cfg.problem == ProblemKind::Euot) report["sigma"] = prm.sigma;
  if (cfg.problem == ProblemKind::MaxEntUdc) report["epsilon"] = prm.epsilon;
  report["checks"] = json::array();
  try {
    switch (cfg.problem) {
      case ProblemKind::Uot: run_uot(cfg, prm, opts, dir, out, report); break;
      case ProblemKind::Euot: run_euot(cfg, prm, opts, dir, out, report); break;
      case ProblemKind::Udc:
      case ProblemKind::MaxEntUdc: run_control(cfg, prm, opts, dir, out, report); break;
    }
    if (out.status != convex::to_string(convex::SolveStatus::Optimal)) out.exit_code = kSolverFailure;
    report["status"] = out.status;
    report["p_star"] = out.p_star;
    report["c_star"] = out.c_star;
    report["objective"] = out.objective;
  } catch (const Error& e) {
    out.exit_code = kSolverFailure;
    out.status = std::string(to_string(e.code()));
    out.error = e.what();
    report["status"] = out.status;
    report["error"] = out.error;
  }
  if (opts.verify && out.exit_code == kOk) {
    for (const Check& c : out.checks) {
      if (!c.passed) out.exit_code = kVerifyFailure;
    }
  }
  report["exit_code"] = out.exit_code;
  std::ofstream(dir / "report.json") << report.dump(2) << '\n';
  return out;
}

std::vector<RunOutcome> run_sweep(const ExperimentConfig& cfg, const RunOptions& opts, const fs::path& dir) {
  const std::vector<RunParams> points = expand(cfg);
  std::vector<RunOutcome> results(points.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      results[i] = run_one(cfg, points[i], opts, dir / run_label(cfg, points[i]));
    }
  };
  const int n = std::min<int>(worker_threads(), static_cast<int>(points.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(dir);
  std::vector<std::string> header{"gamma"};
  if (cfg.problem == ProblemKind::Euot) header.push_back("sigma");
  if (cfg.problem == ProblemKind::MaxEntUdc) header.push_back("epsilon");
  for (const char* h : {"status", "c_star", "p_star", "objective", "exit_code"}) header.push_back(h);
  Csv csv(dir / "summary.csv", header);
  for (const RunOutcome& r : results) {
    std::vector<std::string> row{format_double(r.params.gamma)};
    if (cfg.problem == ProblemKind::Euot) row.push_back(format_double(r.params.sigma));
    if (cfg.problem == ProblemKind::MaxEntUdc) row.push_back(format_double(r.params.epsilon));
    row.push_back(r.status);
    for (double v : {r.c_star, r.p_star, r.objective}) row.push_back(format_double(v));
    row.push_back(std::to_string(r.exit_code));
    csv.row_strings(row);
  }
  return results;
}

int combined_exit(const std::vector<RunOutcome>& runs) {
  // Solver failure outranks a failed check.
  int code = kOk;
  for (const RunOutcome& r : runs) {
    if (r.exit_code == kSolverFailure) return kSolverFailure;
    if (r.exit_code != kOk) code = r.exit_code;
  }
  return code;
}

}  // namespace cli
