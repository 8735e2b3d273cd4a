#include "config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <tomlplusplus/toml.hpp>

namespace zoforge::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

int line_of(const toml::node& node) { return static_cast<int>(node.source().begin.line); }

TomlValue convert_scalar(const toml::node& node, const std::string& key) {
  TomlValue v;
  v.line = line_of(node);
  if (const auto* b = node.as_boolean()) {
    v.kind = TomlValue::Kind::boolean;
    v.b = b->get();
  } else if (const auto* i = node.as_integer()) {
    v.kind = TomlValue::Kind::integer;
    v.i = i->get();
    v.negative = v.i < 0;
    v.u = v.negative ? 0 : static_cast<std::uint64_t>(v.i);
    v.d = static_cast<double>(v.i);
  } else if (const auto* f = node.as_floating_point()) {
    v.kind = TomlValue::Kind::real;
    v.d = f->get();
  } else if (const auto* s = node.as_string()) {
    v.kind = TomlValue::Kind::string;
    v.s = s->get();
  } else {
    fail(v.line, key + ": only strings, numbers, booleans and arrays of them are supported");
  }
  return v;
}

}  // namespace

TomlTable parse_toml(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    fail(static_cast<int>(e.source().begin.line), std::string(e.description()));
  }
  TomlTable table;
  for (const auto& [section_key, section_node] : root) {
    const std::string section(section_key.str());
    const auto* section_table = section_node.as_table();
    if (section_table == nullptr) fail(line_of(section_node), "key '" + section + "' appears before any section");
    for (const auto& [key_node, value] : *section_table) {
      const std::string full = section + "." + std::string(key_node.str());
      if (value.is_table()) fail(line_of(value), "nested table " + full + " is not supported");
      if (const auto* arr = value.as_array()) {
        TomlValue v;
        v.kind = TomlValue::Kind::array;
        v.line = line_of(value);
        for (const auto& item : *arr) {
          if (item.is_array() || item.is_table()) fail(line_of(item), full + ": nested arrays are not supported");
          v.items.push_back(convert_scalar(item, full));
        }
        table.emplace(full, std::move(v));
      } else {
        table.emplace(full, convert_scalar(value, full));
      }
    }
  }
  return table;
}

const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys = {
      {"run", "seed", "0", "u64 master seed; --seed wins, then this key, then ZOFORGE_SEED"},
      {"run", "steps", "1000", "optimizer steps"},
      {"run", "batch_size", "0", "examples per minibatch, 0 = full dataset"},
      {"run", "eval_every", "0", "steps between metrics rows, 0 = first and last row only"},
      {"run", "workers", "1", "threads for the probes of one step (results do not depend on it)"},
      {"run", "timing", "false", "fill elapsed_ns in the metrics (makes metrics non-reproducible)"},
      {"run", "divergence_factor", "1e6", "abort once the loss exceeds this multiple of |L0|"},
      {"run", "stages", "[]", "list of \"group+group:steps\"; empty = all trainable groups for every step"},
      {"optimizer", "algo", "\"sgd\"", "sgd | momentum | adam"},
      {"optimizer", "lr", "1e-3", "base learning rate eta0"},
      {"optimizer", "lr_schedule", "\"constant\"", "constant | linear_decay"},
      {"optimizer", "beta1", "0.9", "Adam beta1 or momentum coefficient"},
      {"optimizer", "beta2", "0.999", "Adam beta2"},
      {"optimizer", "eps_adam", "1e-8", "Adam denominator epsilon"},
      {"optimizer", "weight_decay", "0", "decoupled decay per unit learning rate"},
      {"optimizer", "n_schedule", "\"constant\"", "constant | linear_increase"},
      {"optimizer", "n_final", "1", "probes at the last step of a linear increase"},
      {"optimizer", "couple_lr_to_n", "false", "scale the learning rate by n_t / n0"},
      {"optimizer", "history", "\"dense\"", "dense | reconstruct (momentum and adam)"},
      {"optimizer", "history_window", "0", "records kept by reconstruct, 0 = automatic"},
      {"estimator", "kind", "\"spsa\"", "spsa | one_point | variance_modified | expectation_modified"},
      {"estimator", "n", "1", "probes per step (initial value of the n schedule)"},
      {"estimator", "epsilon", "1e-3", "perturbation scale"},
      {"estimator", "z_dist", "\"gaussian\"", "gaussian | sphere"},
      {"estimator", "scale_source", "\"ones\"", "ones | param_norm | grad_norm | external"},
      {"estimator", "scale_refresh", "\"never\"", "never | per_epoch (grad_norm only)"},
      {"estimator", "norm_probes", "8", "probes per group for grad_norm scales"},
      {"estimator", "external_scale", "[]", "one positive scale per parameter group"},
      {"estimator", "min_scale", "1e-8", "floor for measured group scales"},
      {"objective", "kind", "\"quadratic\"", "quadratic | logistic | mlp | metric | cubic"},
      {"objective", "dim", "10", "parameters of a quadratic or cubic"},
      {"objective", "rank", "0", "unit eigenvalues of a low-rank quadratic, 0 = dim"},
      {"objective", "eigenvalues", "[]", "explicit quadratic spectrum, overrides dim and rank"},
      {"objective", "shifts", "0", "examples with linear terms for a quadratic, 0 = one example"},
      {"objective", "shift_scale", "0.1", "standard deviation of the shift entries"},
      {"objective", "dataset", "\"synthetic_linear\"", "synthetic_linear | synthetic_blobs | two_moons"},
      {"objective", "samples", "200", "dataset examples"},
      {"objective", "features", "2", "input features"},
      {"objective", "classes", "2", "classes"},
      {"objective", "data_seed", "1", "u64 dataset seed"},
      {"objective", "margin", "0", "minimum distance to the hyperplane (synthetic_linear)"},
      {"objective", "logistic_loss", "\"log_sigmoid\"", "log_sigmoid | exp_margin"},
      {"objective", "mlp_loss", "\"cross_entropy\"", "cross_entropy | square"},
      {"objective", "layers", "[]", "MLP widths input to output, empty = [features, 8, classes]"},
      {"objective", "model", "\"logistic\"", "classifier scored by a metric objective: logistic | mlp"},
      {"objective", "metric", "\"accuracy\"", "accuracy | macro_f1"},
      {"objective", "init_seed", "1", "u64 seed of the initial parameters"},
      {"objective", "init_scale", "1.0", "standard deviation of the initial parameters"},
      {"objective", "storage", "\"f64\"", "parameter storage: f64 | f32"},
      {"objective", "adapter_group", "\"\"", "attach a low-rank adapter to this weight group"},
      {"objective", "adapter_rank", "1", "adapter rank"},
      {"objective", "adapter_alpha", "1.0", "adapter scaling alpha"},
      {"trajectory", "precision", "\"f64\"", "stored projected gradients: bf16 | f32 | f64"},
      {"trajectory", "path", "\"\"", "trajectory output path (--out-trajectory wins)"},
      {"trajectory", "metrics", "\"\"", "metrics CSV path (--metrics wins)"},
      {"trajectory", "params", "\"\"", "final parameter export path (--out-params wins)"},
  };
  return keys;
}

std::string config_keys_help() {
  std::string out = "Config keys (section.key = default  # meaning):\n";
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = std::string(k.section);
      out += "  [" + section + "]\n";
    }
    std::string left = "    " + section + "." + std::string(k.key) + " = " + std::string(k.default_value);
    if (left.size() < 48) left.resize(48, ' ');
    out += left + "  # " + std::string(k.unit) + "\n";
  }
  return out;
}

namespace {

class Reader {
 public:
  explicit Reader(const TomlTable& table) : table_(table) {}

  const TomlValue* find(const std::string& key) {
    used_.insert(key);
    const auto it = table_.find(key);
    return it == table_.end() ? nullptr : &it->second;
  }

  double real(const std::string& key, double fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    return as_real(*v, key);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    return as_u64(*v, key);
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::boolean) fail(v->line, key + " must be true or false");
    return v->b;
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (v->kind != TomlValue::Kind::string) fail(v->line, key + " must be a quoted string");
    return v->s;
  }

  std::vector<double> reals(const std::string& key) {
    std::vector<double> out;
    if (const auto* v = array(key)) {
      for (const auto& item : v->items) out.push_back(as_real(item, key));
    }
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) {
    std::vector<std::size_t> out;
    if (const auto* v = array(key)) {
      for (const auto& item : v->items) out.push_back(static_cast<std::size_t>(as_u64(item, key)));
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key) {
    std::vector<std::string> out;
    if (const auto* v = array(key)) {
      for (const auto& item : v->items) {
        if (item.kind != TomlValue::Kind::string) fail(item.line, key + " entries must be quoted strings");
        out.push_back(item.s);
      }
    }
    return out;
  }

  /// Rejects every key that was never looked up.
  void reject_unknown() const {
    std::set<std::string> documented;
    for (const auto& k : config_keys()) documented.insert(std::string(k.section) + "." + std::string(k.key));
    for (const auto& [key, value] : table_) {
      if (!documented.contains(key)) fail(value.line, "unknown key '" + key + "'");
    }
  }

 private:
  const TomlValue* array(const std::string& key) {
    const auto* v = find(key);
    if (v && v->kind != TomlValue::Kind::array) fail(v->line, key + " must be an array");
    return v;
  }

  static double as_real(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::real && v.kind != TomlValue::Kind::integer) fail(v.line, key + " must be a number");
    return v.d;
  }

  // TOML integers stop at 2^63 - 1, so a quoted string carries the full u64 range.
  static std::uint64_t as_u64(const TomlValue& v, const std::string& key) {
    if (v.kind == TomlValue::Kind::string && !v.s.empty() && v.s.front() != '-') {
      errno = 0;
      char* end = nullptr;
      const auto u = std::strtoull(v.s.c_str(), &end, 0);
      if (errno == 0 && end != nullptr && *end == '\0') return u;
    }
    if (v.kind != TomlValue::Kind::integer || v.negative) fail(v.line, key + " must be a non-negative integer");
    return v.u;
  }

  const TomlTable& table_;
  std::set<std::string> used_;
};

template <class F>
auto checked(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

std::vector<Stage> parse_stages(const std::vector<std::string>& specs) {
  std::vector<Stage> stages;
  for (const auto& spec : specs) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) throw ConfigError("stage '" + spec + "' must look like group+group:steps");
    Stage stage;
    std::string groups = spec.substr(0, colon);
    std::size_t start = 0;
    while (start <= groups.size()) {
      const auto plus = groups.find('+', start);
      const std::string name = trim(groups.substr(start, plus == std::string::npos ? std::string::npos : plus - start));
      if (name.empty()) throw ConfigError("stage '" + spec + "' has an empty group name");
      stage.groups.push_back(name);
      if (plus == std::string::npos) break;
      start = plus + 1;
    }
    const std::string steps = trim(spec.substr(colon + 1));
    char* end = nullptr;
    stage.steps = std::strtoull(steps.c_str(), &end, 10);
    if (steps.empty() || *end != '\0') throw ConfigError("stage '" + spec + "' has an invalid step count");
    stages.push_back(std::move(stage));
  }
  return stages;
}

Config config_from_toml(const TomlTable& table) {
  Reader r(table);
  r.reject_unknown();
  Config c;

  c.seed_in_file = table.contains("run.seed");
  c.run.master = Seed{r.u64("run.seed", 0)};
  c.run.steps = r.u64("run.steps", 1000);
  c.run.batch_size = r.u64("run.batch_size", 0);
  c.run.eval_every = r.u64("run.eval_every", 0);
  c.run.workers = r.u64("run.workers", 1);
  c.run.timing = r.boolean("run.timing", false);
  c.run.divergence_factor = r.real("run.divergence_factor", 1e6);
  c.run.stages = parse_stages(r.strings("run.stages"));

  auto& o = c.optimizer;
  o.algo = checked("optimizer.algo", [&] { return parse_algo(r.string("optimizer.algo", "sgd")); });
  o.lr.eta0 = r.real("optimizer.lr", 1e-3);
  o.lr.kind =
      checked("optimizer.lr_schedule", [&] { return parse_lr_schedule(r.string("optimizer.lr_schedule", "constant")); });
  o.beta1 = r.real("optimizer.beta1", 0.9);
  o.beta2 = r.real("optimizer.beta2", 0.999);
  o.eps_adam = r.real("optimizer.eps_adam", 1e-8);
  o.weight_decay = r.real("optimizer.weight_decay", 0.0);
  o.n_schedule.kind =
      checked("optimizer.n_schedule", [&] { return parse_n_schedule(r.string("optimizer.n_schedule", "constant")); });
  o.couple_lr_to_n = r.boolean("optimizer.couple_lr_to_n", false);
  o.history = checked("optimizer.history", [&] { return parse_history_mode(r.string("optimizer.history", "dense")); });
  o.history_window = r.u64("optimizer.history_window", 0);

  auto& e = c.run.estimator;
  e.kind = checked("estimator.kind", [&] { return parse_estimator_kind(r.string("estimator.kind", "spsa")); });
  e.n = r.u64("estimator.n", 1);
  e.epsilon = r.real("estimator.epsilon", 1e-3);
  e.z_dist = checked("estimator.z_dist", [&] { return parse_zdist(r.string("estimator.z_dist", "gaussian")); });
  e.scale_source =
      checked("estimator.scale_source", [&] { return parse_scale_source(r.string("estimator.scale_source", "ones")); });
  e.scale_refresh = checked("estimator.scale_refresh",
                            [&] { return parse_scale_refresh(r.string("estimator.scale_refresh", "never")); });
  e.norm_probes = r.u64("estimator.norm_probes", 8);
  e.external_scale = r.reals("estimator.external_scale");
  e.min_scale = r.real("estimator.min_scale", 1e-8);
  o.n_schedule.n0 = e.n;
  o.n_schedule.n1 = r.u64("optimizer.n_final", e.n);

  auto& ob = c.objective;
  ob.kind = r.string("objective.kind", "quadratic");
  ob.dim = r.u64("objective.dim", 10);
  ob.rank = r.u64("objective.rank", 0);
  ob.eigenvalues = r.reals("objective.eigenvalues");
  ob.shifts = r.u64("objective.shifts", 0);
  ob.shift_scale = r.real("objective.shift_scale", 0.1);
  ob.dataset.kind = checked("objective.dataset",
                            [&] { return parse_dataset_kind(r.string("objective.dataset", "synthetic_linear")); });
  ob.dataset.samples = r.u64("objective.samples", 200);
  ob.dataset.features = r.u64("objective.features", 2);
  ob.dataset.classes = r.u64("objective.classes", 2);
  ob.dataset.seed = Seed{r.u64("objective.data_seed", 1)};
  ob.dataset.margin = r.real("objective.margin", 0.0);
  ob.logistic_loss = checked("objective.logistic_loss",
                             [&] { return parse_logistic_loss(r.string("objective.logistic_loss", "log_sigmoid")); });
  ob.mlp_loss =
      checked("objective.mlp_loss", [&] { return parse_mlp_loss(r.string("objective.mlp_loss", "cross_entropy")); });
  ob.layers = r.sizes("objective.layers");
  ob.model = r.string("objective.model", "logistic");
  ob.metric = checked("objective.metric", [&] { return parse_metric(r.string("objective.metric", "accuracy")); });
  ob.init_seed = Seed{r.u64("objective.init_seed", 1)};
  ob.init_scale = r.real("objective.init_scale", 1.0);
  const std::string storage = r.string("objective.storage", "f64");
  if (storage == "f64") {
    ob.storage = StoragePrecision::f64;
  } else if (storage == "f32") {
    ob.storage = StoragePrecision::f32;
  } else {
    throw ConfigError("objective.storage: expected f64 or f32, got '" + storage + "'");
  }
  ob.adapter_group = r.string("objective.adapter_group", "");
  ob.adapter_rank = r.u64("objective.adapter_rank", 1);
  ob.adapter_alpha = r.real("objective.adapter_alpha", 1.0);

  c.run.precision =
      checked("trajectory.precision", [&] { return parse_grad_precision(r.string("trajectory.precision", "f64")); });
  c.trajectory.path = r.string("trajectory.path", "");
  c.trajectory.metrics = r.string("trajectory.metrics", "");
  c.trajectory.params = r.string("trajectory.params", "");

  checked("run", [&] {
    c.run.validate();
    return 0;
  });
  checked("optimizer", [&] {
    c.optimizer.with_horizon(c.run.steps).validate();
    return 0;
  });
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_toml(parse_toml(buf.str()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Workload build_workload(const ObjectiveSettings& s) {
  Workload w;
  const auto data = [&] { return make_dataset(s.dataset); };
  const auto mlp_layers = [&] {
    if (!s.layers.empty()) return s.layers;
    return std::vector<std::size_t>{s.dataset.features, 8, s.dataset.classes};
  };
  try {
    if (s.kind == "quadratic") {
      QuadraticSpec spec;
      if (!s.eigenvalues.empty()) {
        spec.eigenvalues = s.eigenvalues;
      } else {
        spec = low_rank_quadratic(s.dim, s.rank == 0 ? s.dim : s.rank);
      }
      if (s.shifts > 0) {
        spec.example_shifts = gaussian_shifts(s.shifts, spec.eigenvalues.size(), s.shift_scale, s.dataset.seed);
      }
      w.objective = std::make_unique<QuadraticObjective>(std::move(spec));
    } else if (s.kind == "logistic") {
      w.objective = std::make_unique<LogisticObjective>(data(), s.logistic_loss);
    } else if (s.kind == "mlp") {
      w.objective = std::make_unique<MlpObjective>(data(), mlp_layers(), s.mlp_loss);
    } else if (s.kind == "metric") {
      if (s.model == "logistic") {
        w.model = std::make_unique<LogisticObjective>(data(), s.logistic_loss);
      } else if (s.model == "mlp") {
        w.model = std::make_unique<MlpObjective>(data(), mlp_layers(), s.mlp_loss);
      } else {
        throw ConfigError("objective.model: expected logistic or mlp, got '" + s.model + "'");
      }
      w.objective = std::make_unique<MetricObjective>(*w.model, s.metric);
    } else if (s.kind == "cubic") {
      w.objective = std::make_unique<CubicObjective>(s.dim);
    } else {
      throw ConfigError("objective.kind: expected quadratic, logistic, mlp, metric or cubic, got '" + s.kind + "'");
    }

    ParamStore theta = init_params(*w.objective, s.init_seed, s.init_scale);
    if (!s.adapter_group.empty()) {
      AdapterSpec adapter;
      adapter.target_group = s.adapter_group;
      adapter.rank = s.adapter_rank;
      adapter.alpha = s.adapter_alpha;
      theta = attach_low_rank_adapter(theta, adapter);
    }
    if (s.storage != theta.precision()) theta = with_storage(theta, s.storage);
    w.theta0 = std::move(theta);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("objective: ") + e.what());
  }
  return w;
}

}  // namespace zoforge::cli
