#pragma once

#include "omdl/synth.hpp"

#include <map>
#include <string>
#include <vector>

namespace omdl {

/// Fully resolved description of one harness invocation.
struct RunSpec {
  std::string experiment = "compare-tmod";  // compare-tmod | sparsity-sweep | custom
  std::vector<Algo> algos;                  // empty resolves to the experiment preset
  ExperimentConfig exp;
  std::vector<Index> sweep_k{10, 30, 100};  // sparsity-sweep K values
  std::string out_dir = "out";
  std::string name;  // output stem; empty resolves to the experiment name

  std::vector<Algo> resolved_algos() const;

  /// Cross-field validation; throws ConfigError naming the offending key.
  void validate() const;
};

/// Configuration error carrying the offending key for diagnostics.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

private:
  std::string key_;
};

/// Ordered key/value assignments; duplicate keys keep the last value.
using KeyValueList = std::vector<std::pair<std::string, std::string>>;

/// Parses a `key = value` manifest ('#' comments, blank lines allowed).
/// Malformed lines raise ConfigError with the line number.
KeyValueList parse_config_file(const std::string& path);

/// Applies one assignment, validating range and spelling. Unknown keys are
/// rejected. See the README for the schema.
void apply_key(RunSpec& spec, const std::string& key, const std::string& value);

void apply_all(RunSpec& spec, const KeyValueList& kvs);

/// List of recognized keys (for diagnostics and the CLI).
const std::vector<std::string>& known_config_keys();

}  // namespace omdl
