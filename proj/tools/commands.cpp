#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "config.hpp"
#include "zoforge/theorylab.hpp"

namespace zoforge::cli {

namespace {

namespace fs = std::filesystem;

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("ZOFORGE_SEED");
  if (text == nullptr || *text == '\0') return std::nullopt;
  char* end = nullptr;
  const auto value = std::strtoull(text, &end, 0);
  if (*end != '\0') throw ConfigError(std::string("ZOFORGE_SEED is not an unsigned integer: '") + text + "'");
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
}

struct TrainArgs {
  std::string config;
  std::string out_trajectory;
  std::string metrics;
  std::string out_params;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

int cmd_train(const TrainArgs& a) {
  Config c = load_config(a.config);
  if (a.seed) {
    c.run.master = Seed{*a.seed};
  } else if (!c.seed_in_file) {
    if (const auto s = env_seed()) c.run.master = Seed{*s};
  }
  if (a.workers) c.run.workers = *a.workers;
  const std::string traj_path = a.out_trajectory.empty() ? c.trajectory.path : a.out_trajectory;
  const std::string metrics_path = a.metrics.empty() ? c.trajectory.metrics : a.metrics;
  const std::string params_path = a.out_params.empty() ? c.trajectory.params : a.out_params;

  const Workload w = build_workload(c.objective);
  TrainResult result;
  try {
    result = train(c.run, c.optimizer, *w.objective, w.theta0);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (!traj_path.empty()) write_trajectory(result.trajectory, traj_path);
  if (!metrics_path.empty()) write_metrics_csv(result.metrics, metrics_path);
  if (!params_path.empty()) export_params(result.params, params_path, sidecar_path(params_path));

  const auto& last = result.metrics.back();
  std::printf("steps=%llu\n", static_cast<unsigned long long>(last.step));
  std::printf("initial_loss=%.17g\n", result.metrics.front().loss);
  std::printf("final_loss=%.17g\n", last.loss);
  std::printf("forward_passes=%zu\n", result.forward_passes);
  std::printf("trajectory_bytes=%zu\n", kTrajectoryHeaderSize + result.trajectory.header.payload_scalars() *
                                                                    grad_width(result.trajectory.header.precision));
  return kExitOk;
}

struct ReplayArgs {
  std::string trajectory;
  std::string config;
  std::string init_params;
  std::optional<std::uint64_t> init_seed;
  std::string out_params;
};

int cmd_replay(const ReplayArgs& a) {
  const Trajectory traj = read_trajectory(a.trajectory);
  ReplayOptions options;
  ParamStore theta0;
  std::optional<Config> config;
  if (!a.config.empty()) config = load_config(a.config);
  if (config) {
    options.stages = config->run.stages;
    options.external_scale = config->run.estimator.external_scale;
  }
  if (!a.init_params.empty()) {
    theta0 = import_params(a.init_params, sidecar_path(a.init_params));
  } else {
    if (!config) throw ConfigError("--init-seed needs --config to rebuild the parameter layout");
    ObjectiveSettings settings = config->objective;
    settings.init_seed = Seed{*a.init_seed};
    theta0 = build_workload(settings).theta0;
  }
  theta0 = with_storage(theta0, traj.header.storage);
  const ParamStore theta = replay(traj, theta0, options);
  if (!a.out_params.empty()) export_params(theta, a.out_params, sidecar_path(a.out_params));
  std::printf("steps=%u\n", traj.header.steps);
  std::printf("forward_passes=0\n");
  return kExitOk;
}

struct ValidateArgs {
  std::string suite;
  std::string csv_dir;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
};

int cmd_validate(const ValidateArgs& a) {
  SuiteOptions options;
  if (a.seed) {
    options.seed = Seed{*a.seed};
  } else if (const auto s = env_seed()) {
    options.seed = Seed{*s};
  }
  options.workers = a.workers;
  std::vector<std::string> names;
  if (a.suite == "all") {
    names = suite_names();
  } else {
    names.push_back(a.suite);
  }
  bool all_pass = true;
  for (const auto& name : names) {
    SuiteOutput out;
    try {
      out = run_suite(name, options);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    for (const auto& r : out.reports) {
      std::printf("%s\n", summary_line(r).c_str());
      all_pass = all_pass && r.pass;
    }
    if (!a.csv_dir.empty()) {
      write_text(fs::path(a.csv_dir) / (name + ".csv"), reports_csv(out.reports));
      for (const auto& [file, text] : out.files) write_text(fs::path(a.csv_dir) / file, text);
    }
  }
  std::printf("%s\n", all_pass ? "ALL PASS" : "SOME CHECKS FAILED");
  return all_pass ? kExitOk : kExitUsage;
}

int cmd_inspect(const std::string& path) {
  std::fputs(inspect(read_trajectory(path)).c_str(), stdout);
  return kExitOk;
}

int cmd_export_dataset(const std::string& config_path, const std::string& out) {
  const Config c = load_config(config_path);
  export_dataset_csv(make_dataset(c.objective.dataset), out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"zoforge: zeroth-order (MeZO/SPSA) training, trajectory replay and theory validation"};
  app.require_subcommand(1);
  app.footer(config_keys_help() + "\nExit codes: 0 success, 1 usage or config error (or a failed check), 2 divergence.");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Run MeZO training from a config file");
  train_cmd->add_option("--config", train_args.config, "Config file (TOML)")->required();
  train_cmd->add_option("--out-trajectory", train_args.out_trajectory, "Trajectory output path");
  train_cmd->add_option("--metrics", train_args.metrics, "Metrics CSV output path");
  train_cmd->add_option("--out-params", train_args.out_params, "Final parameter export (raw f64 plus .json sidecar)");
  train_cmd->add_option("--seed", train_args.seed, "Master seed (u64)");
  train_cmd->add_option("--workers", train_args.workers, "Threads for the probes of one step")
      ->check(CLI::PositiveNumber);
  train_cmd->footer(config_keys_help());

  ReplayArgs replay_args;
  auto* replay_cmd = app.add_subcommand("replay", "Rebuild final parameters from a trajectory without evaluations");
  replay_cmd->add_option("--trajectory", replay_args.trajectory, "Trajectory file")->required();
  replay_cmd->add_option("--config", replay_args.config, "Config of the original run (layout and stages)");
  auto* init_params = replay_cmd->add_option("--init-params", replay_args.init_params, "Initial parameter file");
  auto* init_seed = replay_cmd->add_option("--init-seed", replay_args.init_seed, "Rebuild initial parameters from seed");
  init_params->excludes(init_seed);
  replay_cmd->add_option("--out-params", replay_args.out_params, "Output parameter file");

  ValidateArgs validate_args;
  auto* validate_cmd = app.add_subcommand("validate", "Run theory validation suites");
  std::string suite_help = "Suite name or 'all':";
  for (const auto& n : suite_names()) suite_help += " " + n;
  validate_cmd->add_option("--suite", validate_args.suite, suite_help)->required();
  validate_cmd->add_option("--csv", validate_args.csv_dir, "Directory for CSV evidence");
  validate_cmd->add_option("--seed", validate_args.seed, "Suite seed (u64, default 7)");
  validate_cmd->add_option("--workers", validate_args.workers, "Monte Carlo threads")->check(CLI::PositiveNumber);

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a trajectory header and its projected gradients");
  inspect_cmd->add_option("--trajectory", inspect_path, "Trajectory file")->required();

  std::string dataset_config, dataset_out;
  auto* dataset_cmd = app.add_subcommand("export-dataset", "Write the configured dataset as CSV");
  dataset_cmd->add_option("--config", dataset_config, "Config file")->required();
  dataset_cmd->add_option("--out", dataset_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*replay_cmd) {
      if (replay_args.init_params.empty() && !replay_args.init_seed) {
        throw ConfigError("replay needs --init-params or --init-seed");
      }
      return cmd_replay(replay_args);
    }
    if (*validate_cmd) return cmd_validate(validate_args);
    if (*inspect_cmd) return cmd_inspect(inspect_path);
    if (*dataset_cmd) return cmd_export_dataset(dataset_config, dataset_out);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: divergence: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace zoforge::cli
