#include "omdl/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <variant>

namespace omdl {

namespace {

// Derives independent substreams from (experiment seed, trial id).
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t substream(std::uint64_t seed, int trial, std::uint64_t lane) {
  return splitmix64((seed ^ static_cast<std::uint64_t>(trial)) + lane);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool all_finite(const DictionarySet& dicts) {
  for (const auto& d : dicts)
    if (!all_finite(d)) return false;
  return true;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void GenConfig::validate() const {
  if (obs_shape.empty() || obs_shape.size() != core_shape.size()) {
    throw std::invalid_argument("GenConfig: obs_shape and core_shape must be non-empty and of "
                                "equal length");
  }
  Index obs_numel = 1;
  for (size_t n = 0; n < obs_shape.size(); ++n) {
    if (obs_shape[n] < 1 || core_shape[n] < 1) {
      throw std::invalid_argument("GenConfig: extents of mode " + std::to_string(n) +
                                  " must be positive");
    }
    if (obs_shape[n] >= core_shape[n]) {
      throw std::invalid_argument("GenConfig: mode " + std::to_string(n) +
                                  " must be overcomplete (J_n < L_n), got J=" +
                                  std::to_string(obs_shape[n]) + " L=" +
                                  std::to_string(core_shape[n]));
    }
    obs_numel *= obs_shape[n];
  }
  if (sparsity < 0 || sparsity >= obs_numel) {
    throw std::invalid_argument("GenConfig: sparsity must lie in [0, prod J_n), got " +
                                std::to_string(sparsity));
  }
  if (trials < 1) throw std::invalid_argument("GenConfig: trials must be positive");
  if (steps < 1) throw std::invalid_argument("GenConfig: steps must be positive");
}

SynthInstance::SynthInstance(const GenConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (size_t n = 0; n < cfg_.obs_shape.size(); ++n) {
    Matrix psi(cfg_.obs_shape[n], cfg_.core_shape[n]);
    for (Index c = 0; c < psi.cols(); ++c)
      for (Index r = 0; r < psi.rows(); ++r) psi(r, c) = gauss(rng_);
    dicts_.push_back(project_unit_columns(psi, &rng_));
  }
  for (Index l : cfg_.core_shape) grid_ *= l;
  for (Index j : cfg_.obs_shape) numel_ *= j;
}

SynthInstance::Draw SynthInstance::draw() {
  Draw d;
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (cfg_.sparsity > 0) {
    std::uniform_int_distribution<Index> uni(0, grid_ - 1);
    std::set<Index> taken;
    while (static_cast<Index>(taken.size()) < cfg_.sparsity) taken.insert(uni(rng_));
    for (Index off : taken) {
      std::vector<Index> idx(cfg_.core_shape.size());
      Index rem = off;
      for (size_t n = cfg_.core_shape.size(); n-- > 0;) {
        idx[n] = rem % cfg_.core_shape[n];
        rem /= cfg_.core_shape[n];
      }
      d.support.push_back(std::move(idx));
    }
    d.values.resize(d.support.size());
    for (auto& v : d.values) v = gauss(rng_);
  }
  d.noise.resize(numel_);
  for (Index i = 0; i < numel_; ++i) d.noise[i] = gauss(rng_);
  return d;
}

void SynthInstance::skip() { draw(); }

SynthSample SynthInstance::next() {
  Draw dr = draw();
  SparseCore core;
  core.shape = cfg_.core_shape;
  for (size_t i = 0; i < dr.support.size(); ++i) {
    core.entries.push_back({dr.support[i], dr.values[i]});
  }
  DenseTensor signal = sparse_reconstruct(core, dicts_);

  const double signal_norm = signal.data().norm();
  const double noise_norm = dr.noise.norm();
  double scale = 1.0;
  if (std::isinf(cfg_.snr_db)) {
    scale = 0.0;
  } else if (signal_norm > 0.0 && noise_norm > 0.0) {
    const double ratio = cfg_.snr_is_linear ? cfg_.snr_db : std::pow(10.0, cfg_.snr_db / 10.0);
    scale = signal_norm / (noise_norm * std::sqrt(ratio));
  }

  SynthSample s{DenseTensor(cfg_.obs_shape, signal.data() + scale * dr.noise), std::move(core),
                0.0, 0.0};
  const double n = static_cast<double>(numel_);
  s.noise_mse = scale * scale * noise_norm * noise_norm / n;
  s.signal_mse = signal_norm * signal_norm / n;
  return s;
}

double mse(const DenseTensor& e) {
  return e.data().squaredNorm() / static_cast<double>(e.numel());
}

double atom_recovery(const Matrix& est, const Matrix& truth, double threshold,
                     bool* normalized_inputs) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw std::invalid_argument("atom_recovery: shapes differ");
  }
  if (normalized_inputs) *normalized_inputs = false;
  auto normalize = [&](const Matrix& m) {
    Matrix out = m;
    for (Index j = 0; j < out.cols(); ++j) {
      const double norm = out.col(j).norm();
      if (std::abs(norm - 1.0) > 1e-9) {
        if (normalized_inputs) *normalized_inputs = true;
        if (norm > 0.0) out.col(j) /= norm;
      }
    }
    return out;
  };
  const Matrix e = normalize(est);
  const Matrix t = normalize(truth);
  Matrix ip = (e.transpose() * t).cwiseAbs();

  const Index l = ip.rows();
  std::vector<bool> row_used(static_cast<size_t>(l), false);
  std::vector<bool> col_used(static_cast<size_t>(l), false);
  Index matched = 0;
  for (Index round = 0; round < l; ++round) {
    double best = -1.0;
    Index bi = -1, bj = -1;
    for (Index i = 0; i < l; ++i) {
      if (row_used[static_cast<size_t>(i)]) continue;
      for (Index j = 0; j < l; ++j) {
        if (col_used[static_cast<size_t>(j)]) continue;
        if (ip(i, j) > best) {
          best = ip(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0 || !(best > threshold)) break;  // no remaining pair can qualify
    row_used[static_cast<size_t>(bi)] = true;
    col_used[static_cast<size_t>(bj)] = true;
    ++matched;
  }
  return static_cast<double>(matched) / static_cast<double>(l);
}

const char* to_string(Algo a) {
  switch (a) {
    case Algo::OmdlSd: return "omdl-sd";
    case Algo::OmdlQn: return "omdl-qn";
    case Algo::Tmod: return "tmod";
  }
  return "?";
}

std::optional<Algo> algo_from_string(const std::string& s) {
  if (s == "omdl-sd") return Algo::OmdlSd;
  if (s == "omdl-qn") return Algo::OmdlQn;
  if (s == "tmod") return Algo::Tmod;
  return std::nullopt;
}

namespace {

struct TrialOutput {
  std::vector<ExperimentRecord> records;
  std::vector<std::string> events;
};

using AnyLearner = std::variant<OmdlLearner, TmodLearner>;

AnyLearner make_learner(const ExperimentConfig& cfg, Algo algo, std::uint64_t seed,
                        const DictionarySet* warm_start) {
  LearnerConfig lc = cfg.learner;
  lc.obs_shape = cfg.gen.obs_shape;
  lc.core_shape = cfg.gen.core_shape;
  lc.sparsity = cfg.gen.sparsity;
  lc.seed = seed;
  switch (algo) {
    case Algo::OmdlSd:
    case Algo::OmdlQn:
      lc.direction =
          algo == Algo::OmdlSd ? Direction::SteepestDescent : Direction::QuasiNewton;
      if (warm_start) return AnyLearner{std::in_place_type<OmdlLearner>, lc, *warm_start};
      return AnyLearner{std::in_place_type<OmdlLearner>, lc};
    case Algo::Tmod:
    default:
      if (warm_start) {
        return AnyLearner{std::in_place_type<TmodLearner>, lc, cfg.tmod_ridge, *warm_start};
      }
      return AnyLearner{std::in_place_type<TmodLearner>, lc, cfg.tmod_ridge};
  }
}

TrialOutput run_trial(const ExperimentConfig& cfg, Algo algo, int trial,
                      const std::function<void()>& tick) {
  TrialOutput out;
  const std::uint64_t seed = cfg.gen.seed;
  SynthInstance inst(cfg.gen, substream(seed, trial, 1));

  long step_offset = 0;
  AnyLearner learner = [&]() -> AnyLearner {
    if (!cfg.resume_from.empty() && algo != Algo::Tmod) {
      OmdlLearner restored = OmdlLearner::load_snapshot(cfg.resume_from);
      step_offset = restored.iteration();
      for (long i = 0; i < step_offset; ++i) inst.skip();
      return AnyLearner{std::move(restored)};
    }
    return make_learner(cfg, algo, substream(seed, trial, 2),
                        cfg.init_at_truth ? &inst.dictionaries() : nullptr);
  }();

  long fallbacks = 0, clips = 0, bfgs_skips = 0, coder_drops = 0;
  bool diverged_before = false;
  for (long t = 1; t <= cfg.gen.steps; ++t) {
    SynthSample sample = inst.next();
    std::vector<std::vector<Index>> true_support;
    if (cfg.oracle_coding) {
      for (const auto& e : sample.core.entries) true_support.push_back(e.index);
    }
    StepReport rep = std::visit(
        [&](auto& l) {
          if (cfg.oracle_coding) {
            const SparseCore oracle =
                code_oracle_support(sample.x, l.dictionaries(), true_support);
            return l.step(sample.x, oracle);
          }
          return l.step(sample.x);
        },
        learner);

    const DictionarySet view =
        std::visit([](const auto& l) { return l.dictionaries(); }, learner);
    const DictionarySet& raw =
        std::visit([](const auto& l) -> const DictionarySet& { return l.raw_dictionaries(); },
                   learner);

    ExperimentRecord rec;
    rec.trial = trial;
    rec.step = step_offset + t;
    rec.lambda = rep.lambda_prev;

    double alpha_sum = 0.0;
    for (const auto& m : rep.modes) {
      alpha_sum += m.alpha;
      fallbacks += m.qn_fallback;
      clips += m.ls_clipped;
      bfgs_skips += m.bfgs_skipped;
    }
    coder_drops += rep.coder_dropped_atoms;
    rec.alpha_mean = rep.modes.empty() ? 0.0 : alpha_sum / static_cast<double>(rep.modes.size());

    double eval_mse;
    if (cfg.gen.sparsity > 0 && all_finite(view)) {
      const SparseCore eval_core = cfg.oracle_coding
                                       ? code_oracle_support(sample.x, view, true_support)
                                       : code_omp(sample.x, view, cfg.gen.sparsity);
      const DenseTensor recon = sparse_reconstruct(eval_core, view);
      eval_mse = mse(DenseTensor(sample.x.shape(), sample.x.data() - recon.data()));
    } else {
      eval_mse = mse(sample.x);
    }
    rec.mse = eval_mse;

    double rec_sum = 0.0;
    for (size_t n = 0; n < view.size(); ++n) {
      const double r = atom_recovery(view[n], inst.dictionaries()[n]);
      rec.recovery_per_mode.push_back(r);
      rec_sum += r;
    }
    rec.recovery = rec_sum / static_cast<double>(view.size());

    rec.diverged = !all_finite(raw) || !std::isfinite(rec.mse);
    out.records.push_back(std::move(rec));
    tick();

    if (out.records.back().diverged && !diverged_before) {
      diverged_before = true;
      out.events.push_back("event=divergence algo=" + std::string(to_string(algo)) +
                           " trial=" + std::to_string(trial) + " step=" + std::to_string(t));
      if (cfg.truncate_on_divergence) {
        out.events.push_back("event=truncated trial=" + std::to_string(trial) + " remaining=" +
                             std::to_string(cfg.gen.steps - t));
        for (long r = t; r < cfg.gen.steps; ++r) tick();
        break;
      }
    }
  }
  if (fallbacks || clips || bfgs_skips || coder_drops) {
    out.events.push_back("event=flags trial=" + std::to_string(trial) +
                         " qn_fallback=" + std::to_string(fallbacks) +
                         " ls_clipped=" + std::to_string(clips) +
                         " bfgs_skipped=" + std::to_string(bfgs_skips) +
                         " coder_dropped_atoms=" + std::to_string(coder_drops));
  }
  if (!cfg.snapshot_out.empty() && algo != Algo::Tmod) {
    std::get<OmdlLearner>(learner).save_snapshot(cfg.snapshot_out);
    out.events.push_back("event=snapshot path=" + cfg.snapshot_out +
                         " iteration=" + std::to_string(step_offset + cfg.gen.steps));
  }
  return out;
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, Algo algo, RecordSink& sink) {
  cfg.gen.validate();
  const int trials = cfg.gen.trials;
  const long total_steps = static_cast<long>(trials) * cfg.gen.steps;

  std::vector<TrialOutput> outputs(static_cast<size_t>(trials));
  std::atomic<int> next_trial{0};
  std::atomic<long> done_steps{0};
  std::atomic<int> last_decile{0};
  std::mutex progress_mutex;

  auto tick = [&] {
    const long done = ++done_steps;
    const int decile = static_cast<int>(done * 10 / total_steps);
    int prev = last_decile.load();
    while (decile > prev && last_decile.compare_exchange_weak(prev, decile)) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      sink.on_progress(decile * 10);
      break;
    }
  };

  auto worker = [&] {
    for (;;) {
      const int trial = next_trial.fetch_add(1);
      if (trial >= trials) return;
      outputs[static_cast<size_t>(trial)] = run_trial(cfg, algo, trial, tick);
    }
  };

  const int degree = std::max(1, std::min(cfg.parallelism, trials));
  if (degree == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(degree));
    for (int i = 0; i < degree; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Merge in trial order so output is independent of scheduling.
  std::vector<long> diverged_at(static_cast<size_t>(trials), -1);  // 1-based position
  for (int trial = 0; trial < trials; ++trial) {
    long pos = 0;
    for (const auto& rec : outputs[static_cast<size_t>(trial)].records) {
      ++pos;
      if (rec.diverged && diverged_at[static_cast<size_t>(trial)] < 0) {
        diverged_at[static_cast<size_t>(trial)] = pos;
      }
      sink.on_record(algo, rec);
    }
    for (const auto& ev : outputs[static_cast<size_t>(trial)].events) sink.on_event(ev);
  }

  std::vector<SummaryRow> summary(static_cast<size_t>(cfg.gen.steps));
  for (long t = 1; t <= cfg.gen.steps; ++t) {
    SummaryRow& row = summary[static_cast<size_t>(t - 1)];
    row.step = t;
    for (int trial = 0; trial < trials; ++trial) {
      const auto& recs = outputs[static_cast<size_t>(trial)].records;
      if (t <= static_cast<long>(recs.size())) {
        row.step = recs[static_cast<size_t>(t - 1)].step;
        break;
      }
    }
    int finite_count = 0;
    int diverged_count = 0;
    for (int trial = 0; trial < trials; ++trial) {
      const auto& recs = outputs[static_cast<size_t>(trial)].records;
      if (diverged_at[static_cast<size_t>(trial)] >= 0 &&
          t >= diverged_at[static_cast<size_t>(trial)]) {
        ++diverged_count;
      }
      if (t > static_cast<long>(recs.size())) continue;
      const auto& rec = recs[static_cast<size_t>(t - 1)];
      if (!std::isfinite(rec.mse) || !std::isfinite(rec.recovery)) continue;
      row.mse_mean += rec.mse;
      row.recovery_mean += rec.recovery;
      row.lambda_mean += rec.lambda;
      row.alpha_mean += std::isfinite(rec.alpha_mean) ? rec.alpha_mean : 0.0;
      ++finite_count;
    }
    if (finite_count > 0) {
      row.mse_mean /= finite_count;
      row.recovery_mean /= finite_count;
      row.lambda_mean /= finite_count;
      row.alpha_mean /= finite_count;
    }
    row.trials = finite_count;
    row.diverged_frac = static_cast<double>(diverged_count) / static_cast<double>(trials);
  }
  sink.on_summary(algo, summary);
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

struct CsvSink::Impl {
  std::ofstream csv, summary, mse_dat, recovery_dat, log;
  bool finalized = false;
};

CsvSink::CsvSink(std::string directory, std::string stem)
    : dir_(std::move(directory)), stem_(std::move(stem)), impl_(new Impl) {
  namespace fs = std::filesystem;
  fs::create_directories(dir_);
  const std::string base = (fs::path(dir_) / stem_).string();
  csv_path_ = base + ".csv";
  impl_->csv.open(csv_path_);
  impl_->summary.open(base + "_summary.csv");
  impl_->mse_dat.open(base + "_mse.dat");
  impl_->recovery_dat.open(base + "_recovery.dat");
  impl_->log.open(base + ".log");
  if (!impl_->csv || !impl_->summary || !impl_->mse_dat || !impl_->recovery_dat || !impl_->log) {
    throw std::runtime_error("CsvSink: cannot create output files under " + dir_);
  }
  impl_->csv << "trial,step,algo,mse,recovery,lambda,alpha_mean,diverged\n";
  impl_->summary << "step,mse_mean,recovery_mean,lambda_mean,alpha_mean,diverged_frac,trials\n";
}

CsvSink::~CsvSink() = default;

void CsvSink::on_record(Algo algo, const ExperimentRecord& rec) {
  impl_->csv << rec.trial << ',' << rec.step << ',' << to_string(algo) << ','
             << format_double(rec.mse) << ',' << format_double(rec.recovery) << ','
             << format_double(rec.lambda) << ',' << format_double(rec.alpha_mean) << ','
             << (rec.diverged ? 1 : 0) << '\n';
}

void CsvSink::on_summary(Algo, const std::vector<SummaryRow>& rows) {
  for (const auto& r : rows) {
    impl_->summary << r.step << ',' << format_double(r.mse_mean) << ','
                   << format_double(r.recovery_mean) << ',' << format_double(r.lambda_mean) << ','
                   << format_double(r.alpha_mean) << ',' << format_double(r.diverged_frac) << ','
                   << r.trials << '\n';
    impl_->mse_dat << r.step << ' ' << format_double(r.mse_mean) << '\n';
    impl_->recovery_dat << r.step << ' ' << format_double(r.recovery_mean) << '\n';
  }
}

void CsvSink::on_event(const std::string& line) { impl_->log << line << '\n'; }

void CsvSink::on_progress(int percent) {
  impl_->log << "event=progress pct=" << percent << '\n';
}

void CsvSink::finalize() {
  if (impl_->finalized) return;
  impl_->finalized = true;
  impl_->csv.flush();
  impl_->summary.flush();
  impl_->mse_dat.flush();
  impl_->recovery_dat.flush();
  impl_->log.flush();
  namespace fs = std::filesystem;
  std::ofstream done((fs::path(dir_) / (stem_ + ".done")).string());
  done << "ok\n";
}

void export_plot_data(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("export_plot_data: cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("export_plot_data: empty file");
  if (line.rfind("trial,step,algo,", 0) != 0) {
    throw std::runtime_error("export_plot_data: unexpected header in " + csv_path);
  }
  struct Acc {
    double mse = 0.0, recovery = 0.0;
    int n = 0;
  };
  std::map<long, Acc> by_step;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 8) {
      throw std::runtime_error("export_plot_data: malformed row at line " +
                               std::to_string(lineno));
    }
    const long step = std::stol(fields[1]);
    const double m = std::strtod(fields[3].c_str(), nullptr);
    const double r = std::strtod(fields[4].c_str(), nullptr);
    if (!std::isfinite(m) || !std::isfinite(r)) continue;
    Acc& a = by_step[step];
    a.mse += m;
    a.recovery += r;
    ++a.n;
  }
  const std::string stem = csv_path.size() > 4 ? csv_path.substr(0, csv_path.size() - 4)
                                               : csv_path;
  std::ofstream mse_out(stem + "_mse.dat");
  std::ofstream rec_out(stem + "_recovery.dat");
  if (!mse_out || !rec_out) throw std::runtime_error("export_plot_data: cannot write .dat files");
  for (const auto& [step, acc] : by_step) {
    if (acc.n == 0) continue;
    mse_out << step << ' ' << format_double(acc.mse / acc.n) << '\n';
    rec_out << step << ' ' << format_double(acc.recovery / acc.n) << '\n';
  }
}

}  // namespace omdl
