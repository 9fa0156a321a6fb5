#pragma once

#include "omdl/learner.hpp"
#include "omdl/tmod.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace omdl {

/// Synthetic stream configuration. Defaults follow the benchmark setup:
/// 3-way observations from 10x20 unit-column Gaussian dictionaries, K = 10,
/// 50 dB SNR, 100 trials.
struct GenConfig {
  std::vector<Index> obs_shape{10, 10, 10};
  std::vector<Index> core_shape{20, 20, 20};
  Index sparsity = 10;
  double snr_db = 50.0;        // per-sample signal-to-noise target
  bool snr_is_linear = false;  // interpret snr_db as a plain power ratio instead
  int trials = 100;
  long steps = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  DenseTensor x;
  SparseCore core;       // generating support and values
  double noise_mse = 0;  // ||W||_F^2 / numel for this sample
  double signal_mse = 0;
};

/// A ground-truth dictionary set plus a deterministic sample stream.
/// Per sample: K support positions uniform without replacement, values
/// i.i.d. N(0,1), noise scaled so the per-sample SNR matches the target
/// exactly (a zero-energy signal leaves the noise unscaled).
class SynthInstance {
public:
  SynthInstance(const GenConfig& cfg, std::uint64_t seed);

  const DictionarySet& dictionaries() const { return dicts_; }
  SynthSample next();

  /// Consumes the random draws of one sample without the tensor math;
  /// next() after n skips equals the (n+1)-th sample of a fresh stream.
  void skip();

private:
  struct Draw {
    std::vector<std::vector<Index>> support;
    std::vector<double> values;
    Eigen::VectorXd noise;
  };
  Draw draw();

  GenConfig cfg_;
  DictionarySet dicts_;
  std::mt19937_64 rng_;
  Index grid_ = 1;
  Index numel_ = 1;
};

inline SynthInstance generate_instance(const GenConfig& cfg, std::uint64_t seed) {
  return SynthInstance(cfg, seed);
}

/// ||E||_F^2 / numel(E).
double mse(const DenseTensor& e);

/// Greedy one-to-one matching on absolute column inner products; returns the
/// fraction of matches above the threshold. Sign- and permutation-invariant.
/// Non-unit columns are normalized internally (flag reported if given).
double atom_recovery(const Matrix& est, const Matrix& truth, double threshold = 0.95,
                     bool* normalized_inputs = nullptr);

enum class Algo { OmdlSd, OmdlQn, Tmod };

const char* to_string(Algo a);
std::optional<Algo> algo_from_string(const std::string& s);

struct ExperimentRecord {
  int trial = 0;
  long step = 0;
  double mse = 0.0;
  double recovery = 0.0;  // mean across modes
  std::vector<double> recovery_per_mode;
  double lambda = 1.0;
  double alpha_mean = 0.0;
  bool diverged = false;
};

struct SummaryRow {
  long step = 0;
  double mse_mean = 0.0;
  double recovery_mean = 0.0;
  double lambda_mean = 0.0;
  double alpha_mean = 0.0;
  double diverged_frac = 0.0;
  int trials = 0;
};

struct ExperimentConfig {
  GenConfig gen;
  LearnerConfig learner;  // shapes/sparsity are synchronized with gen before a run
  double tmod_ridge = 0.0;
  bool truncate_on_divergence = true;
  int parallelism = 1;

  // Single-learner sessions (trials == 1, omdl algos only): optionally start
  // from a saved snapshot and/or save one at the end. The generator stream is
  // fast-forwarded past the snapshot's iteration count, so a resumed run
  // continues the original sample sequence exactly.
  std::string resume_from;
  std::string snapshot_out;

  // Diagnostic modes: start the learner at the generating dictionaries, or
  // bypass the pursuit by refitting on the true support (both learner and
  // evaluation coding). Useful for isolating the dictionary updates from
  // coding errors.
  bool init_at_truth = false;
  bool oracle_coding = false;
};

/// Receives merged per-trial records in (trial, step) order after all trials
/// finish, then the cross-trial per-step summary. Event lines carry flag and
/// divergence notices. Not called concurrently.
class RecordSink {
public:
  virtual ~RecordSink() = default;
  virtual void on_record(Algo algo, const ExperimentRecord& rec) = 0;
  virtual void on_summary(Algo /*algo*/, const std::vector<SummaryRow>& /*rows*/) {}
  virtual void on_event(const std::string& /*line*/) {}
  virtual void on_progress(int /*percent*/) {}
};

/// Runs `trials` independent trials of one algorithm over fresh synthetic
/// instances. Each trial owns its learner and rng streams (derived from the
/// experiment seed and trial id), so results are independent of the
/// parallelism degree. Per step the sample is fed to the learner, then the
/// sample is freshly coded against the projected dictionaries to produce the
/// reconstruction MSE, and atom recovery is measured against the generating
/// dictionaries.
void run_experiment(const ExperimentConfig& cfg, Algo algo, RecordSink& sink);

/// In-memory sink used by tests.
class CollectSink : public RecordSink {
public:
  void on_record(Algo, const ExperimentRecord& rec) override { records.push_back(rec); }
  void on_summary(Algo, const std::vector<SummaryRow>& rows) override { summary = rows; }
  void on_event(const std::string& line) override { events.push_back(line); }

  std::vector<ExperimentRecord> records;
  std::vector<SummaryRow> summary;
  std::vector<std::string> events;
};

/// Streams records into `<prefix>.csv`, the per-step means into
/// `<prefix>_summary.csv`, gnuplot-style curves into `<prefix>_mse.dat` /
/// `<prefix>_recovery.dat`, and event lines into `<prefix>.log`. A `.done`
/// sentinel marks a completed run; its absence flags an interrupted one.
class CsvSink : public RecordSink {
public:
  CsvSink(std::string directory, std::string stem);
  ~CsvSink() override;

  void on_record(Algo algo, const ExperimentRecord& rec) override;
  void on_summary(Algo algo, const std::vector<SummaryRow>& rows) override;
  void on_event(const std::string& line) override;
  void on_progress(int percent) override;

  void finalize();  // writes the sentinel; implied by destruction only on success
  const std::string& csv_path() const { return csv_path_; }

private:
  std::string dir_, stem_;
  std::string csv_path_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Recomputes per-step cross-trial means from a raw experiment CSV and writes
/// `<stem>_mse.dat` / `<stem>_recovery.dat` next to it.
void export_plot_data(const std::string& csv_path);

}  // namespace omdl
