#pragma once

// Run configuration files: TOML documents parsed with toml++, restricted
// to the sections [run], [optimizer], [estimator], [objective] and
// [trajectory] holding scalars or arrays of scalars. Keys outside the
// documented table are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"
#include "zoforge/train.hpp"

namespace zoforge::cli {

/// Configuration problem; the CLI maps it to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct TomlValue {
  enum class Kind { boolean, integer, real, string, array };
  Kind kind = Kind::integer;
  bool b = false;
  std::int64_t i = 0;
  /// Value of a non-negative integer.
  std::uint64_t u = 0;
  bool negative = false;
  double d = 0.0;
  std::string s;
  std::vector<TomlValue> items;
  int line = 0;
};

/// "section.key" -> value.
using TomlTable = std::map<std::string, TomlValue>;

/// Flattens a document; throws ConfigError with the line number on bad syntax.
TomlTable parse_toml(std::string_view text);

/// One documented configuration key.
struct KeyDoc {
  std::string_view section;
  std::string_view key;
  std::string_view default_value;
  std::string_view unit;
};

/// Every accepted key, in the order `--help` lists them.
const std::vector<KeyDoc>& config_keys();
/// Text table of config_keys() for help output.
std::string config_keys_help();

struct ObjectiveSettings {
  std::string kind = "quadratic";
  std::size_t dim = 10;
  std::size_t rank = 0;
  std::vector<double> eigenvalues;
  std::size_t shifts = 0;
  double shift_scale = 0.1;
  DatasetSpec dataset;
  LogisticLoss logistic_loss = LogisticLoss::log_sigmoid;
  MlpLoss mlp_loss = MlpLoss::cross_entropy;
  std::vector<std::size_t> layers;
  std::string model = "logistic";
  Metric metric = Metric::accuracy;
  Seed init_seed{1};
  double init_scale = 1.0;
  StoragePrecision storage = StoragePrecision::f64;
  std::string adapter_group;
  std::size_t adapter_rank = 1;
  double adapter_alpha = 1.0;
};

struct TrajectorySettings {
  std::string path;
  std::string metrics;
  std::string params;
};

struct Config {
  RunConfig run;
  OptimizerConfig optimizer;
  ObjectiveSettings objective;
  TrajectorySettings trajectory;
  /// True when [run] seed was given in the file.
  bool seed_in_file = false;
};

/// Builds a Config from parsed TOML; throws ConfigError on unknown keys,
/// wrong value types or values the library rejects.
Config config_from_toml(const TomlTable& table);
/// Reads and parses a file; a missing file raises ConfigError naming it.
Config load_config(const std::filesystem::path& path);

/// Objective plus its initial parameters.
struct Workload {
  std::unique_ptr<Classifier> model;
  std::unique_ptr<Objective> objective;
  ParamStore theta0;
};

/// Builds the objective described by `settings` and its initial
/// parameters, with the adapter attached and the storage precision set.
Workload build_workload(const ObjectiveSettings& settings);

/// Parses "a+b:steps" stage strings.
std::vector<Stage> parse_stages(const std::vector<std::string>& specs);

}  // namespace zoforge::cli
