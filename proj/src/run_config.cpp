#include "omdl/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace omdl {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": expected an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  if (value == "inf" || value == "Inf") return std::numeric_limits<double>::infinity();
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(key, key + ": expected a boolean (true/false), got '" + value + "'");
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_long(key, item));
  }
  if (out.empty()) throw ConfigError(key, key + ": expected a comma-separated integer list");
  return out;
}

long parse_positive(const std::string& key, const std::string& value) {
  const long v = parse_long(key, value);
  if (v < 1) throw ConfigError(key, key + ": must be >= 1, got " + value);
  return v;
}

}  // namespace

std::vector<Algo> RunSpec::resolved_algos() const {
  if (!algos.empty()) return algos;
  if (experiment == "compare-tmod") return {Algo::OmdlQn, Algo::Tmod};
  if (experiment == "sparsity-sweep") return {Algo::OmdlQn};
  return {Algo::OmdlQn};
}

void RunSpec::validate() const {
  if (experiment != "compare-tmod" && experiment != "sparsity-sweep" && experiment != "custom") {
    throw ConfigError("experiment", "experiment: must be compare-tmod, sparsity-sweep or custom, "
                                    "got '" + experiment + "'");
  }
  try {
    exp.gen.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("gen", e.what());
  }
  LearnerConfig lc = exp.learner;
  lc.obs_shape = exp.gen.obs_shape;
  lc.core_shape = exp.gen.core_shape;
  lc.sparsity = std::max<Index>(exp.gen.sparsity, 0);
  try {
    lc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("learner", e.what());
  }
  if (exp.tmod_ridge < 0.0) {
    throw ConfigError("tmod_ridge", "tmod_ridge: must be >= 0");
  }
  if (exp.parallelism < 1) {
    throw ConfigError("parallelism", "parallelism: must be >= 1");
  }
  if (experiment == "sparsity-sweep") {
    Index obs_numel = 1;
    for (Index j : exp.gen.obs_shape) obs_numel *= j;
    for (Index k : sweep_k) {
      if (k < 1 || k >= obs_numel) {
        throw ConfigError("sweep_k", "sweep_k: every value must lie in [1, prod J_n), got " +
                                         std::to_string(k));
      }
    }
  }
  if (out_dir.empty()) throw ConfigError("out_dir", "out_dir: must not be empty");
}

KeyValueList parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "config: cannot open '" + path + "'");
  KeyValueList kvs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("<line " + std::to_string(lineno) + ">",
                        "config: line " + std::to_string(lineno) +
                            " is not a 'key = value' assignment: '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw ConfigError("<line " + std::to_string(lineno) + ">",
                        "config: empty key at line " + std::to_string(lineno));
    }
    kvs.emplace_back(key, value);
  }
  return kvs;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "experiment", "name", "algos", "modes", "obs_dim", "core_dim", "obs_shape", "core_shape",
      "sparsity", "snr_db", "snr_linear", "trials", "steps", "seed", "lambda0", "tau_sched",
      "t_window", "allow_short_window", "use_sample_weight", "shared_mode1_weight",
      "project_every_step", "eps_reg", "eps_denom", "alpha_max", "tmod_ridge",
      "truncate_on_divergence", "sweep_k", "out_dir", "parallelism"};
  return keys;
}

void apply_key(RunSpec& spec, const std::string& key, const std::string& value) {
  GenConfig& gen = spec.exp.gen;
  LearnerConfig& lc = spec.exp.learner;

  if (key == "experiment") {
    if (value != "compare-tmod" && value != "sparsity-sweep" && value != "custom") {
      throw ConfigError(key, "experiment: must be compare-tmod, sparsity-sweep or custom, got '" +
                                 value + "'");
    }
    spec.experiment = value;
  } else if (key == "name") {
    spec.name = value;
  } else if (key == "algos") {
    std::vector<Algo> algos;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto a = algo_from_string(item);
      if (!a) throw ConfigError(key, "algos: unknown algorithm '" + item +
                                         "' (expected omdl-sd, omdl-qn or tmod)");
      algos.push_back(*a);
    }
    if (algos.empty()) throw ConfigError(key, "algos: expected at least one algorithm");
    spec.algos = std::move(algos);
  } else if (key == "modes") {
    const long n = parse_positive(key, value);
    if (n > 8) throw ConfigError(key, "modes: at most 8 supported, got " + value);
    const Index j = gen.obs_shape.empty() ? 10 : gen.obs_shape[0];
    const Index l = gen.core_shape.empty() ? 20 : gen.core_shape[0];
    gen.obs_shape.assign(static_cast<size_t>(n), j);
    gen.core_shape.assign(static_cast<size_t>(n), l);
  } else if (key == "obs_dim") {
    const long j = parse_positive(key, value);
    std::fill(gen.obs_shape.begin(), gen.obs_shape.end(), j);
  } else if (key == "core_dim") {
    const long l = parse_positive(key, value);
    std::fill(gen.core_shape.begin(), gen.core_shape.end(), l);
  } else if (key == "obs_shape") {
    gen.obs_shape = parse_index_list(key, value);
  } else if (key == "core_shape") {
    gen.core_shape = parse_index_list(key, value);
  } else if (key == "sparsity") {
    const long k = parse_long(key, value);
    if (k < 0) throw ConfigError(key, "sparsity: must be >= 0, got " + value);
    gen.sparsity = k;
  } else if (key == "snr_db") {
    gen.snr_db = parse_double(key, value);
  } else if (key == "snr_linear") {
    gen.snr_is_linear = parse_bool(key, value);
  } else if (key == "trials") {
    gen.trials = static_cast<int>(parse_positive(key, value));
  } else if (key == "steps") {
    gen.steps = parse_positive(key, value);
  } else if (key == "seed") {
    try {
      gen.seed = std::stoull(value);
    } catch (const std::exception&) {
      throw ConfigError(key, "seed: expected an unsigned integer, got '" + value + "'");
    }
  } else if (key == "lambda0") {
    const double v = parse_double(key, value);
    if (!(v > 0.0 && v <= 1.0)) {
      throw ConfigError(key, "lambda0: must lie in (0, 1], got " + value);
    }
    lc.lambda0 = v;
  } else if (key == "tau_sched") {
    lc.tau_sched = parse_positive(key, value);
  } else if (key == "t_window") {
    lc.t_window = parse_positive(key, value);
  } else if (key == "allow_short_window") {
    lc.allow_short_window = parse_bool(key, value);
  } else if (key == "use_sample_weight") {
    lc.use_sample_weight = parse_bool(key, value);
  } else if (key == "shared_mode1_weight") {
    lc.shared_mode1_weight = parse_bool(key, value);
  } else if (key == "project_every_step") {
    lc.project_every_step = parse_bool(key, value);
  } else if (key == "eps_reg") {
    const double v = parse_double(key, value);
    if (!(v > 0.0)) throw ConfigError(key, "eps_reg: must be > 0, got " + value);
    lc.eps_reg = v;
  } else if (key == "eps_denom") {
    const double v = parse_double(key, value);
    if (!(v > 0.0)) throw ConfigError(key, "eps_denom: must be > 0, got " + value);
    lc.eps_denom = v;
  } else if (key == "alpha_max") {
    const double v = parse_double(key, value);
    if (!(v > 0.0)) throw ConfigError(key, "alpha_max: must be > 0, got " + value);
    lc.alpha_max = v;
  } else if (key == "tmod_ridge") {
    const double v = parse_double(key, value);
    if (v < 0.0) throw ConfigError(key, "tmod_ridge: must be >= 0, got " + value);
    spec.exp.tmod_ridge = v;
  } else if (key == "truncate_on_divergence") {
    spec.exp.truncate_on_divergence = parse_bool(key, value);
  } else if (key == "sweep_k") {
    spec.sweep_k = parse_index_list(key, value);
  } else if (key == "out_dir") {
    if (value.empty()) throw ConfigError(key, "out_dir: must not be empty");
    spec.out_dir = value;
  } else if (key == "parallelism") {
    spec.exp.parallelism = static_cast<int>(parse_positive(key, value));
  } else {
    throw ConfigError(key, "unknown configuration key '" + key + "'");
  }
}

void apply_all(RunSpec& spec, const KeyValueList& kvs) {
  for (const auto& [key, value] : kvs) apply_key(spec, key, value);
}

}  // namespace omdl
