#pragma once

// Experiment configuration: JSON schema, validation with field paths, presets.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gudc/udc.hpp"

namespace cli {

enum class ProblemKind { Uot, Euot, Udc, MaxEntUdc };

std::string_view to_string(ProblemKind k);

/// Schema violation; path is a JSON pointer-like dotted path ("oracle.grid.n").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct GridSpec {
  double lo = 0.0, hi = 0.0;
  int n = 400;
  bool explicit_bounds = false;
};

struct OracleSpec {
  bool enabled = false;
  GridSpec grid;
  std::vector<double> eps_schedule;  // empty: default schedule
  int restarts = 8;
};

struct SamplingSpec {
  bool enabled = false;
  int n_paths = 200;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  ProblemKind problem = ProblemKind::Uot;
  gudc::UnbalancedGaussian alpha, beta;
  std::vector<double> gamma;
  std::vector<double> sigma;    // euot
  std::vector<double> epsilon;  // maxent-udc
  std::optional<gudc::LinearSystem> system;
  double tol = 1e-8;
  int max_iter = 500;
  OracleSpec oracle;
  SamplingSpec sampling;
  std::string output_dir = "out";

  /// gamma x (sigma | epsilon) combinations.
  std::size_t combinations() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// One point of a sweep.
struct RunParams {
  double gamma = 1.0;
  double sigma = 0.0;    // euot only
  double epsilon = 0.0;  // maxent only
};

std::vector<RunParams> expand(const ExperimentConfig& cfg);

struct Preset {
  std::string name;
  std::string description;
  /// One or more sweeps; table1 uses two (one per case).
  std::vector<std::pair<std::string, nlohmann::json>> configs;
};

const std::vector<Preset>& presets();
const Preset& find_preset(const std::string& name);

}  // namespace cli
