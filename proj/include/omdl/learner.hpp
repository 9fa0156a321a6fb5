#pragma once

#include "omdl/sparse_coding.hpp"
#include "omdl/tensor.hpp"

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace omdl {

enum class Direction { SteepestDescent, QuasiNewton };

const char* to_string(Direction d);

struct LearnerConfig {
  std::vector<Index> obs_shape;   // J_n per mode
  std::vector<Index> core_shape;  // L_n per mode, J_n < L_n for overcompleteness
  Index sparsity = 10;            // K used by the built-in coder

  Direction direction = Direction::QuasiNewton;
  double lambda0 = 0.8;    // initial forgetting factor, in (0, 1]
  long tau_sched = 100;    // iterations for lambda to ramp to 1
  long t_window = 0;       // sliding window length; 0 resolves to max_n L_n
  bool allow_short_window = false;  // permit t_window < max_n L_n
  bool use_sample_weight = true;    // correcting weight mu on each arrival
  bool shared_mode1_weight = false; // reuse mode 1's mu for all modes
  bool project_every_step = false;  // column renormalization inside the loop
  double eps_reg = 1e-12;    // reciprocal condition floor for the BFGS block
  double eps_denom = 1e-12;  // degenerate line-search / weight denominators
  double alpha_max = 1e6;    // step-size clip when the denominator degenerates
  std::uint64_t seed = 0;

  Index mode_count() const { return static_cast<Index>(obs_shape.size()); }
  long resolved_window() const;

  /// Throws invalid_argument naming the offending field.
  void validate() const;
};

/// Per-mode windowed second-order statistics: R (L x L), P (J x L), and the
/// FIFO of past arrivals needed to evict them once they leave the window.
/// Each retained entry's lambda_tag accumulates the product of forgetting
/// factors since its arrival, so the evicted entry carries
/// Lambda_{t-T} = prod_{tau=1..T} lambda_{t-tau} exactly.
class WindowedStats {
public:
  WindowedStats() = default;
  WindowedStats(Index dict_rows, Index dict_cols, long capacity);

  struct Increments {
    Matrix s_inc;  // contribution added to R this step (eviction included)
    Matrix q_inc;  // contribution added to P this step
  };

  /// One step of the weighted, windowed recursion:
  ///   R <- lambda_prev * R + mu*A - [evicted]   (symmetrized)
  ///   P <- lambda_prev * P + mu*B - [evicted]
  Increments update(const Matrix& a, const Matrix& b, double mu, double lambda_prev);

  const Matrix& r() const { return r_; }
  const Matrix& p() const { return p_; }
  long window_size() const { return static_cast<long>(window_.size()); }
  long capacity() const { return capacity_; }

  struct Entry {
    Matrix a, b;
    double mu = 1.0;
    double lambda_tag = 1.0;
  };
  const std::deque<Entry>& window() const { return window_; }

private:
  Matrix r_, p_;
  std::deque<Entry> window_;
  long capacity_ = 0;

  friend class LearnerSnapshotIo;
};

/// Quartic ramp of the forgetting factor from lambda0 at t = 0 to 1 at
/// t >= tau_sched.
double forgetting_schedule(long t, double lambda0, long tau_sched);

/// Correcting weight mu = (1 + ||H_hat||_F / sqrt(tr A))^{-1} in (0, 1].
/// A degenerate trace (<= eps_denom) yields mu = 1 and sets the flag.
double sample_weight(const Matrix& h_hat, const Matrix& a, double eps_denom,
                     bool* degenerate = nullptr);

/// Mode-n sample Gram and cross-correlation of an arrival:
///   A = <S_partial, S_partial> over all modes but n   (L_n x L_n, PSD)
///   B = <X, S_partial> over all modes but n           (J_n x L_n)
/// where S_partial applies every dictionary except mode n's to the core.
struct ArrivalStats {
  Matrix a, b;
};
ArrivalStats compute_arrivals(const DenseTensor& x, const SparseCore& core,
                              const DictionarySet& dicts, Index mode);

/// A priori gradient by dual recursion: G = lambda_prev * G_post_prev + H_hat
/// with H_hat = Psi_prev * S_inc - Q_inc. Equals Psi_prev * R - P exactly.
Matrix a_priori_gradient(const Matrix& g_post_prev, double lambda_prev, const Matrix& psi_prev,
                         const Matrix& s_inc, const Matrix& q_inc);

Matrix direction_sd(const Matrix& g);

/// D = -G * C_prev. When the descent condition tr(D G^T) < 0 fails (or is
/// marginal against eps_denom scaling) the direction falls back to -G and the
/// caller should reset C to identity.
struct QnDirection {
  Matrix d;
  bool fell_back = false;
};
QnDirection direction_qn(const Matrix& g, const Matrix& c_prev, double eps_denom);

/// Closed-form step along D for the quadratic mode cost:
///   H = D * R,  alpha = -<D,G> / <D,H>.
/// A degenerate denominator (<= eps_denom * ||D||_F^2) clips alpha into
/// [0, alpha_max] and sets the flag.
struct LineSearchResult {
  double alpha = 0.0;
  Matrix h;
  bool clipped = false;
};
LineSearchResult exact_line_search(const Matrix& d, const Matrix& g, const Matrix& r,
                                   double eps_denom, double alpha_max);

/// A posteriori gradient G_hat = G + alpha * H; equals Psi_new * R - P.
Matrix dual_posterior_update(const Matrix& g, double alpha, const Matrix& h);

/// BFGS-style refresh of the inverse Gram estimate:
///   F = (D H^T)^{-1} D,
///   C = (I - F^T H) C_prev (I - H^T F) + D^T F.
/// Skipped (flag set) when D H^T is singular to eps_reg reciprocal condition.
struct BfgsResult {
  Matrix c;
  bool skipped = false;
};
BfgsResult bfgs_update(const Matrix& c_prev, const Matrix& d, const Matrix& h, double eps_reg);

/// Scales every column to unit 2-norm. Zero columns are replaced by a fresh
/// random unit vector (drawn from `rng`, or from a fixed internal seed when
/// rng is null) and flag the event.
Matrix project_unit_columns(const Matrix& psi, std::mt19937_64* rng = nullptr,
                            bool* replaced_zero_column = nullptr);

/// Quadratic mode cost tr(1/2 Psi R Psi^T - P Psi^T); the objective every
/// line search and monotonicity check evaluates.
double mode_cost(const Matrix& psi, const Matrix& r, const Matrix& p);

struct ModeReport {
  double alpha = 0.0;
  double grad_norm = 0.0;
  double mu = 1.0;
  double cost_before = 0.0;
  double cost_after = 0.0;
  Direction used = Direction::SteepestDescent;
  bool qn_fallback = false;
  bool ls_clipped = false;
  bool bfgs_skipped = false;
  bool mu_degenerate = false;
  bool stepped = false;  // false when the gradient vanished
};

struct StepDebug {
  Matrix psi_before, psi_after, g, g_hat, d, h, s_inc, q_inc, a, b;
};

struct StepReport {
  long t = 0;
  double lambda_prev = 1.0;  // decay applied to history this step
  Index coded_nnz = 0;
  int coder_dropped_atoms = 0;
  std::vector<ModeReport> modes;
  std::vector<StepDebug> debug;  // populated only when debug recording is on
};

/// Per-mode learner state bundle.
struct ModeState {
  WindowedStats stats;
  Matrix g_post;  // a posteriori gradient carried into the next step
  Matrix c;       // inverse Gram estimate (quasi-Newton)
};

/// Online multilinear dictionary learner. Single writer per instance;
/// distinct instances are independent.
class OmdlLearner {
public:
  explicit OmdlLearner(LearnerConfig cfg);

  /// Warm start from given dictionaries (shapes must match the config).
  OmdlLearner(LearnerConfig cfg, DictionarySet initial);

  /// Codes x with the built-in pursuit, then runs the per-mode update sweep.
  StepReport step(const DenseTensor& x);

  /// Same sweep with externally supplied coefficients.
  StepReport step(const DenseTensor& x, const SparseCore& core);

  const LearnerConfig& config() const { return cfg_; }
  long iteration() const { return t_; }

  /// Unit-column reporting view of the dictionaries.
  DictionarySet dictionaries() const;
  const DictionarySet& raw_dictionaries() const { return dicts_; }
  const ModeState& mode_state(Index n) const { return modes_[static_cast<size_t>(n)]; }

  void set_record_debug(bool on) { record_debug_ = on; }

  /// Versioned binary snapshot (dictionaries, statistics, window, counter);
  /// dictionaries round-trip bit-exactly. Native endianness.
  void save_snapshot(const std::string& path) const;
  static OmdlLearner load_snapshot(const std::string& path);

  void save_snapshot(std::ostream& os) const;
  static OmdlLearner load_snapshot(std::istream& is);

private:
  LearnerConfig cfg_;
  long t_ = 0;
  DictionarySet dicts_;
  std::vector<ModeState> modes_;
  std::mt19937_64 rng_;
  bool record_debug_ = false;

  friend class LearnerSnapshotIo;
};

}  // namespace omdl
