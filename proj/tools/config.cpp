#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace cli {

using nlohmann::json;
using gudc::Mat;
using gudc::Vec;

std::string_view to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::Uot: return "uot";
    case ProblemKind::Euot: return "euot";
    case ProblemKind::Udc: return "udc";
    case ProblemKind::MaxEntUdc: return "maxent-udc";
  }
  return "?";
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string join(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void only_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError(join(path, k), "unknown field");
  }
}

const json& required(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "missing required field");
  return j.at(key);
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "expected a finite number");
  return v;
}

double positive(const json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0.0)) throw ConfigError(path, "must be positive");
  return v;
}

int integer(const json& j, const std::string& path, int min) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  const auto v = j.get<long long>();
  if (v < min || v > 1000000000LL) throw ConfigError(path, "must be at least " + std::to_string(min));
  return static_cast<int>(v);
}

std::vector<double> positive_list(const json& j, const std::string& path) {
  if (j.is_number()) return {positive(j, path)};
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a number or a nonempty list of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(positive(j[i], join(path, i)));
  return out;
}

Vec vector(const json& j, const std::string& path) {
  if (j.is_number()) return Vec::Constant(1, number(j, path));
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a number or a nonempty list");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], join(path, i));
  return v;
}

// Row-major nested arrays; a bare number is a 1x1 matrix.
Mat matrix(const json& j, const std::string& path) {
  if (j.is_number()) return Mat::Constant(1, 1, number(j, path));
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
    throw ConfigError(path, "expected a number or a nonempty list of rows");
  }
  const std::size_t cols = j[0].size();
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string rp = join(path, r);
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(rp, "rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], join(rp, c));
    }
  }
  return m;
}

gudc::UnbalancedGaussian measure(const json& j, const std::string& path) {
  only_keys(j, path, {"mass", "mean", "cov"});
  gudc::UnbalancedGaussian g{positive(required(j, path, "mass"), join(path, "mass")),
                             vector(required(j, path, "mean"), join(path, "mean")),
                             matrix(required(j, path, "cov"), join(path, "cov"))};
  if (g.cov.rows() != g.mean.size() || g.cov.cols() != g.mean.size()) {
    throw ConfigError(join(path, "cov"), "shape does not match the mean");
  }
  try {
    g.validate(true);
  } catch (const gudc::Error& e) {
    throw ConfigError(join(path, "cov"), e.what());
  }
  return g;
}

}  // namespace

std::size_t ExperimentConfig::combinations() const {
  if (problem == ProblemKind::Euot) return gamma.size() * sigma.size();
  if (problem == ProblemKind::MaxEntUdc) return gamma.size() * epsilon.size();
  return gamma.size();
}

ExperimentConfig parse_config(const json& j) {
  only_keys(j, "", {"problem", "references", "gamma", "sigma", "epsilon", "system", "solver", "oracle", "sampling",
                    "output_dir"});
  ExperimentConfig cfg;
  const json& pj = required(j, "", "problem");
  const std::string p = pj.is_string() ? pj.get<std::string>() : "";
  if (p == "uot") cfg.problem = ProblemKind::Uot;
  else if (p == "euot") cfg.problem = ProblemKind::Euot;
  else if (p == "udc") cfg.problem = ProblemKind::Udc;
  else if (p == "maxent-udc") cfg.problem = ProblemKind::MaxEntUdc;
  else throw ConfigError("problem", "expected one of uot, euot, udc, maxent-udc");

  const json& refs = required(j, "", "references");
  only_keys(refs, "references", {"alpha", "beta"});
  cfg.alpha = measure(required(refs, "references", "alpha"), "references.alpha");
  cfg.beta = measure(required(refs, "references", "beta"), "references.beta");
  if (cfg.alpha.dim() != cfg.beta.dim()) throw ConfigError("references.beta.mean", "dimension differs from alpha");
  const int d = cfg.alpha.dim();

  cfg.gamma = positive_list(required(j, "", "gamma"), "gamma");
  const bool control = cfg.problem == ProblemKind::Udc || cfg.problem == ProblemKind::MaxEntUdc;
  if (cfg.problem == ProblemKind::Euot) {
    cfg.sigma = positive_list(required(j, "", "sigma"), "sigma");
  } else if (j.contains("sigma")) {
    throw ConfigError("sigma", "only used by euot");
  }
  if (cfg.problem == ProblemKind::MaxEntUdc) {
    cfg.epsilon = positive_list(required(j, "", "epsilon"), "epsilon");
  } else if (j.contains("epsilon")) {
    throw ConfigError("epsilon", "only used by maxent-udc");
  }

  if (control) {
    const json& s = required(j, "", "system");
    only_keys(s, "system", {"A", "B", "T"});
    gudc::LinearSystem sys{matrix(required(s, "system", "A"), "system.A"), matrix(required(s, "system", "B"), "system.B"),
                           integer(required(s, "system", "T"), "system.T", 2)};
    if (sys.A.rows() != d || sys.A.cols() != d) throw ConfigError("system.A", "must be d x d with d the reference dimension");
    if (sys.B.rows() != d) throw ConfigError("system.B", "must have d rows");
    try {
      sys.validate();
    } catch (const gudc::Error& e) {
      throw ConfigError("system", e.what());
    }
    cfg.system = sys;
  } else if (j.contains("system")) {
    throw ConfigError("system", "only used by udc and maxent-udc");
  }

  if (j.contains("solver")) {
    const json& s = j.at("solver");
    only_keys(s, "solver", {"tol", "max_iter"});
    if (s.contains("tol")) cfg.tol = positive(s.at("tol"), "solver.tol");
    if (s.contains("max_iter")) cfg.max_iter = integer(s.at("max_iter"), "solver.max_iter", 1);
  }

  if (j.contains("oracle")) {
    const json& o = j.at("oracle");
    only_keys(o, "oracle", {"enabled", "grid", "eps_schedule", "restarts"});
    if (o.contains("enabled")) {
      if (!o.at("enabled").is_boolean()) throw ConfigError("oracle.enabled", "expected true or false");
      cfg.oracle.enabled = o.at("enabled").get<bool>();
    }
    if (o.contains("grid")) {
      const json& g = o.at("grid");
      only_keys(g, "oracle.grid", {"lo", "hi", "n"});
      if (g.contains("lo") != g.contains("hi")) throw ConfigError("oracle.grid", "lo and hi go together");
      if (g.contains("lo")) {
        cfg.oracle.grid.lo = number(g.at("lo"), "oracle.grid.lo");
        cfg.oracle.grid.hi = number(g.at("hi"), "oracle.grid.hi");
        if (!(cfg.oracle.grid.lo < cfg.oracle.grid.hi)) throw ConfigError("oracle.grid.hi", "must exceed lo");
        cfg.oracle.grid.explicit_bounds = true;
      }
      if (g.contains("n")) cfg.oracle.grid.n = integer(g.at("n"), "oracle.grid.n", 50);
    }
    if (o.contains("eps_schedule")) cfg.oracle.eps_schedule = positive_list(o.at("eps_schedule"), "oracle.eps_schedule");
    if (o.contains("restarts")) cfg.oracle.restarts = integer(o.at("restarts"), "oracle.restarts", 1);
  }

  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    only_keys(s, "sampling", {"n_paths", "seed"});
    if (!control) throw ConfigError("sampling", "only used by udc and maxent-udc");
    cfg.sampling.enabled = true;
    if (s.contains("n_paths")) cfg.sampling.n_paths = integer(s.at("n_paths"), "sampling.n_paths", 1);
    if (s.contains("seed")) {
      const json& seed = s.at("seed");
      if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0)) {
        throw ConfigError("sampling.seed", "expected a nonnegative integer");
      }
      cfg.sampling.seed = seed.get<std::uint64_t>();
    }
  }

  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string()) throw ConfigError("output_dir", "expected a string");
    cfg.output_dir = j.at("output_dir").get<std::string>();
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

std::vector<RunParams> expand(const ExperimentConfig& cfg) {
  std::vector<RunParams> out;
  for (double g : cfg.gamma) {
    if (cfg.problem == ProblemKind::Euot) {
      for (double s : cfg.sigma) out.push_back({g, s, 0.0});
    } else if (cfg.problem == ProblemKind::MaxEntUdc) {
      for (double e : cfg.epsilon) out.push_back({g, 0.0, e});
    } else {
      out.push_back({g, 0.0, 0.0});
    }
  }
  return out;
}

namespace {

json scalar_measure(double mass, double mean, double sd) { return {{"mass", mass}, {"mean", mean}, {"cov", sd * sd}}; }

json transport_case(double beta_mass) {
  return {{"problem", "uot"},
          {"references", {{"alpha", scalar_measure(1.0, -1.0, 0.9)}, {"beta", scalar_measure(beta_mass, 1.2, 0.6)}}},
          {"gamma", {0.2, 1.0, 10.0, 30.0}},
          {"oracle", {{"grid", {{"lo", -6.0}, {"hi", 6.0}, {"n", 400}}}}}};
}

std::vector<Preset> build_presets() {
  std::vector<Preset> out;
  out.push_back({"table1", "optimal mass c* for both transport cases over gamma in {0.2, 1, 10, 30}",
                 {{"case1", transport_case(0.6)}, {"case2", transport_case(1.0)}}});
  out.push_back({"fig1", "optimal transport marginals against the references, both cases",
                 {{"case1", transport_case(0.6)}, {"case2", transport_case(1.0)}}});
  json plans = transport_case(1.0);
  // gamma = 1e4 stands in for balanced OT.
  plans["gamma"] = {0.2, 30.0, 1e4};
  plans["oracle"]["grid"]["n"] = 200;
  out.push_back({"fig2", "transport plans of the balanced case for small, large and near-infinite gamma",
                 {{"case2", plans}}});
  out.push_back({"fig3", "scalar density control with A = B = 1, T = 10, gamma in {3, 10}",
                 {{"udc",
                   {{"problem", "udc"},
                    {"references", {{"alpha", scalar_measure(1.0, -4.0, 0.9)}, {"beta", scalar_measure(0.4, 4.0, 0.6)}}},
                    {"gamma", {3.0, 10.0}},
                    {"system", {{"A", 1.0}, {"B", 1.0}, {"T", 10}}}}}}});
  json entropic = transport_case(1.0);
  entropic["problem"] = "euot";
  entropic["gamma"] = 30.0;
  entropic["sigma"] = {0.1, 0.5};
  entropic["oracle"]["grid"]["n"] = 200;
  out.push_back({"euot", "entropic transport plans, balanced case, gamma = 30, sigma in {0.1, 0.5}",
                 {{"case2", entropic}}});
  const json ref_cov = {{2.0, 0.0}, {0.0, 2.0}};
  out.push_back({"maxent", "two-dimensional maximum-entropy control, T = 50, epsilon in {0.02, 0.4}, 200 paths",
                 {{"maxent",
                   {{"problem", "maxent-udc"},
                    {"references",
                     {{"alpha", {{"mass", 1.0}, {"mean", {0.0, 4.0}}, {"cov", ref_cov}}},
                      {"beta", {{"mass", 1.0}, {"mean", {0.0, -4.0}}, {"cov", ref_cov}}}}},
                    {"gamma", 1.0},
                    {"epsilon", {0.02, 0.4}},
                    {"system", {{"A", {{0.9, 0.1}, {0.05, 1.2}}}, {"B", {{1.0, 0.0}, {0.0, 1.0}}}, {"T", 50}}},
                    {"sampling", {{"n_paths", 200}, {"seed", 0}}}}}}});
  return out;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = build_presets();
  return all;
}

const Preset& find_preset(const std::string& name) {
  for (const Preset& p : presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("preset", "unknown preset '" + name + "'");
}

}  // namespace cli
