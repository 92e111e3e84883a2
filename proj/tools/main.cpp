// gauss_udc: solve, sweep and verify Gaussian unbalanced transport and
// density control problems from a JSON config or a built-in preset.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "config.hpp"
#include "run.hpp"

namespace fs = std::filesystem;
using namespace cli;

namespace {

struct Args {
  std::string config, preset, out;
  std::uint64_t seed = 0;
  bool oracle = false;
};

void print(const std::string& where, const std::vector<RunOutcome>& runs, bool show_checks) {
  for (const RunOutcome& r : runs) {
    std::cout << where << " gamma=" << format_double(r.params.gamma);
    if (r.params.sigma > 0) std::cout << " sigma=" << format_double(r.params.sigma);
    if (r.params.epsilon > 0) std::cout << " epsilon=" << format_double(r.params.epsilon);
    std::cout << "  " << r.status;
    if (r.error.empty()) {
      std::cout << "  c*=" << format_double(r.c_star) << "  objective=" << format_double(r.objective);
    } else {
      std::cout << "  " << r.error;
    }
    std::cout << '\n';
    if (!show_checks) continue;
    for (const Check& c : r.checks) {
      std::cout << "  " << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << format_double(c.value)
                << " (tol " << format_double(c.tolerance) << ")\n";
    }
  }
}

// Named configs from --config or --preset; the name becomes a subdirectory
// when there is more than one.
std::vector<std::pair<std::string, ExperimentConfig>> load(const Args& a) {
  if (a.config.empty() == a.preset.empty()) throw ConfigError("<args>", "give exactly one of --config or --preset");
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  if (!a.config.empty()) {
    out.emplace_back("", load_config(a.config));
  } else {
    const Preset& p = find_preset(a.preset);
    for (const auto& [name, j] : p.configs) out.emplace_back(p.configs.size() > 1 ? name : "", parse_config(j));
  }
  return out;
}

RunOptions options(const Args& a, const CLI::App& sub, bool verify) {
  RunOptions o;
  o.seed = a.seed;
  o.seed_given = sub.count("--seed") > 0;
  o.force_oracle = a.oracle;
  o.verify = verify;
  return o;
}

fs::path out_dir(const Args& a, const ExperimentConfig& cfg, const std::string& name) {
  const fs::path base = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  return name.empty() ? base : base / name;
}

int cmd_solve(const Args& a, const CLI::App& sub) {
  std::vector<RunOutcome> all;
  for (const auto& [name, cfg] : load(a)) {
    if (cfg.combinations() != 1) {
      const char* field = cfg.gamma.size() > 1 ? "gamma" : cfg.problem == ProblemKind::Euot ? "sigma" : "epsilon";
      throw ConfigError(field, "solve takes a single value; use sweep for lists");
    }
    const RunOutcome r = run_one(cfg, expand(cfg).front(), options(a, sub, false), out_dir(a, cfg, name));
    print(name.empty() ? "solve" : name, {r}, false);
    all.push_back(r);
  }
  return combined_exit(all);
}

int cmd_sweep(const Args& a, const CLI::App& sub, bool verify) {
  std::vector<RunOutcome> all;
  for (const auto& [name, cfg] : load(a)) {
    const std::vector<RunOutcome> runs = run_sweep(cfg, options(a, sub, verify), out_dir(a, cfg, name));
    print(name.empty() ? (verify ? "verify" : "sweep") : name, runs, verify);
    all.insert(all.end(), runs.begin(), runs.end());
  }
  return combined_exit(all);
}

int cmd_preset(const Args& a, const CLI::App& sub, const std::string& name) {
  const Preset& p = find_preset(name);
  const fs::path base = (a.out.empty() ? fs::path("out") : fs::path(a.out)) / p.name;
  std::cout << p.name << ": " << p.description << '\n';
  std::vector<RunOutcome> all;
  std::map<std::string, std::vector<RunOutcome>> by_config;
  for (const auto& [cname, j] : p.configs) {
    const ExperimentConfig cfg = parse_config(j);
    by_config[cname] = run_sweep(cfg, options(a, sub, false), base / cname);
    print(cname, by_config[cname], false);
    all.insert(all.end(), by_config[cname].begin(), by_config[cname].end());
  }
  if (p.name == "table1") {
    std::ofstream csv(base / "table1.csv");
    csv << "gamma,c_star_unbalanced,c_star_balanced\n";
    const auto& u = by_config["case1"];
    const auto& b = by_config["case2"];
    for (std::size_t i = 0; i < u.size(); ++i) {
      csv << format_double(u[i].params.gamma) << ',' << format_double(u[i].c_star) << ','
          << format_double(b[i].c_star) << '\n';
    }
    std::cout << "wrote " << (base / "table1.csv").string() << '\n';
  }
  return combined_exit(all);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian unbalanced transport and density control"};
  app.require_subcommand(1);
  Args a;
  std::string preset_name;
  bool list = false;

  const auto common = [&](CLI::App* s, bool with_source) {
    if (with_source) {
      s->add_option("--config", a.config, "JSON experiment config");
      s->add_option("--preset", a.preset, "built-in config instead of --config");
    }
    s->add_option("--out", a.out, "output directory (default: output_dir of the config)");
    s->add_option("--seed", a.seed, "seed for sampling and multistart (overrides sampling.seed)");
    s->add_flag("--oracle", a.oracle, "run the oracle comparison even if the config does not enable it");
  };
  CLI::App* solve = app.add_subcommand("solve", "solve one parameter point");
  CLI::App* sweep = app.add_subcommand("sweep", "solve every gamma x sigma/epsilon combination in parallel");
  CLI::App* verify = app.add_subcommand("verify", "sweep with oracle and invariant checks; exit 4 when a check fails");
  CLI::App* preset = app.add_subcommand("preset", "run a built-in experiment");
  common(solve, true);
  common(sweep, true);
  common(verify, true);
  common(preset, false);
  preset->add_option("name", preset_name, "table1, fig1, fig2, fig3, euot or maxent");
  preset->add_option("--preset", preset_name, "same as the positional name");
  preset->add_flag("--list", list, "list presets and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*solve) return cmd_solve(a, *solve);
    if (*sweep) return cmd_sweep(a, *sweep, false);
    if (*verify) return cmd_sweep(a, *verify, true);
    if (list || preset_name.empty()) {
      for (const Preset& p : presets()) std::cout << p.name << "  " << p.description << '\n';
      return preset_name.empty() && !list ? kConfigError : kOk;
    }
    return cmd_preset(a, *preset, preset_name);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
}
