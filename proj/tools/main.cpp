// Command-line harness: configure, run, checkpoint and export experiments.

#include "omdl/run_config.hpp"
#include "omdl/synth.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using omdl::Algo;
using omdl::ConfigError;
using omdl::CsvSink;
using omdl::KeyValueList;
using omdl::RunSpec;

// CsvSink that also prints progress lines to the terminal.
class CliSink : public CsvSink {
public:
  CliSink(const std::string& dir, const std::string& stem)
      : CsvSink(dir, stem), label_(stem) {}

  void on_progress(int percent) override {
    CsvSink::on_progress(percent);
    std::cout << "[" << label_ << "] " << percent << "%\n" << std::flush;
  }

private:
  std::string label_;
};

// One CLI option per config key; values flow through the same apply_key
// validation as the config file.
struct FlagValues {
  std::map<std::string, std::string> values;

  void add_options(CLI::App& app) {
    for (const auto& key : omdl::known_config_keys()) {
      std::string flag = "--" + key;
      for (auto& c : flag)
        if (c == '_') c = '-';
      app.add_option_function<std::string>(
          flag, [this, key](const std::string& v) { values[key] = v; },
          "config key '" + key + "'");
    }
  }

  KeyValueList as_list() const {
    KeyValueList out;
    for (const auto& [k, v] : values) out.emplace_back(k, v);
    return out;
  }
};

// Precedence: defaults < config file < flags; --override flips the last two.
// OMDL_OUT_DIR / OMDL_PARALLELISM env vars win over both for their keys.
RunSpec build_spec(const std::string& config_path, const FlagValues& flags, bool override_flags) {
  RunSpec spec;
  KeyValueList from_file;
  if (!config_path.empty()) from_file = omdl::parse_config_file(config_path);
  const KeyValueList from_flags = flags.as_list();
  if (override_flags) {
    omdl::apply_all(spec, from_flags);
    omdl::apply_all(spec, from_file);
  } else {
    omdl::apply_all(spec, from_file);
    omdl::apply_all(spec, from_flags);
  }
  if (const char* env = std::getenv("OMDL_OUT_DIR")) omdl::apply_key(spec, "out_dir", env);
  if (const char* env = std::getenv("OMDL_PARALLELISM")) {
    omdl::apply_key(spec, "parallelism", env);
  }
  spec.validate();
  return spec;
}

int run_spec(RunSpec spec, const std::string& snapshot_out, const std::string& resume_from) {
  spec.exp.snapshot_out = snapshot_out;
  spec.exp.resume_from = resume_from;
  const std::vector<Algo> algos = spec.resolved_algos();

  if (!snapshot_out.empty() || !resume_from.empty()) {
    if (spec.exp.gen.trials != 1) {
      std::cerr << "error: snapshotting needs a single-learner session (trials = 1, got "
                << spec.exp.gen.trials << ")\n";
      return 2;
    }
    for (Algo a : algos) {
      if (a == Algo::Tmod) {
        std::cerr << "error: snapshots cover the omdl learner only; drop tmod from --algos\n";
        return 2;
      }
    }
  }

  const std::string stem_base = spec.name.empty() ? spec.experiment : spec.name;
  if (spec.experiment == "sparsity-sweep") {
    for (omdl::Index k : spec.sweep_k) {
      omdl::ExperimentConfig exp = spec.exp;
      exp.gen.sparsity = k;
      for (Algo algo : algos) {
        const std::string stem =
            stem_base + "_k" + std::to_string(k) + "_" + omdl::to_string(algo);
        CliSink sink(spec.out_dir, stem);
        omdl::run_experiment(exp, algo, sink);
        sink.finalize();
        std::cout << "wrote " << sink.csv_path() << "\n";
      }
    }
  } else {
    for (Algo algo : algos) {
      const std::string stem = stem_base + "_" + omdl::to_string(algo);
      CliSink sink(spec.out_dir, stem);
      omdl::run_experiment(spec.exp, algo, sink);
      sink.finalize();
      std::cout << "wrote " << sink.csv_path() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online multilinear dictionary learning benchmark harness"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  auto* run = app.add_subcommand("run", "run an experiment and write CSV outputs");
  std::string run_config, run_snapshot_out;
  bool run_override = false;
  FlagValues run_flags;
  run->add_option("--config", run_config, "key = value manifest file");
  run->add_flag("--override", run_override, "let the config file win over explicit flags");
  run->add_option("--snapshot-out", run_snapshot_out,
                  "save the learner state after a single-learner session");
  run_flags.add_options(*run);

  // --- validate-config -----------------------------------------------------
  auto* validate = app.add_subcommand("validate-config", "check a manifest and exit");
  std::string validate_path;
  validate->add_option("path", validate_path, "manifest to check")->required();

  // --- resume --------------------------------------------------------------
  auto* resume = app.add_subcommand("resume", "continue a single-learner session");
  std::string resume_snapshot, resume_config, resume_snapshot_out;
  bool resume_override = false;
  FlagValues resume_flags;
  resume->add_option("--snapshot", resume_snapshot, "learner snapshot to restore")->required();
  resume->add_option("--config", resume_config, "manifest of the original session");
  resume->add_flag("--override", resume_override, "let the config file win over explicit flags");
  resume->add_option("--snapshot-out", resume_snapshot_out,
                     "where to save the updated snapshot (default: the input path)");
  resume_flags.add_options(*resume);

  // --- export-plots ----------------------------------------------------------
  auto* export_cmd = app.add_subcommand("export-plots",
                                        "recompute step-vs-metric curves from raw CSVs");
  std::vector<std::string> export_paths;
  export_cmd->add_option("csv", export_paths, "raw experiment CSV files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      RunSpec spec = build_spec(run_config, run_flags, run_override);
      return run_spec(std::move(spec), run_snapshot_out, "");
    }
    if (*validate) {
      RunSpec spec;
      omdl::apply_all(spec, omdl::parse_config_file(validate_path));
      spec.validate();
      std::cout << "ok\n";
      return 0;
    }
    if (*resume) {
      RunSpec spec = build_spec(resume_config, resume_flags, resume_override);
      if (spec.experiment != "custom") spec.experiment = "custom";
      const std::string out =
          resume_snapshot_out.empty() ? resume_snapshot : resume_snapshot_out;
      return run_spec(std::move(spec), out, resume_snapshot);
    }
    if (*export_cmd) {
      for (const auto& path : export_paths) {
        omdl::export_plot_data(path);
        std::cout << "exported curves for " << path << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
