#include "omdl/learner.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace omdl {

const char* to_string(Direction d) {
  return d == Direction::SteepestDescent ? "sd" : "qn";
}

long LearnerConfig::resolved_window() const {
  if (t_window > 0) return t_window;
  Index m = 1;
  for (Index l : core_shape) m = std::max(m, l);
  return static_cast<long>(m);
}

void LearnerConfig::validate() const {
  if (obs_shape.empty() || obs_shape.size() != core_shape.size()) {
    throw std::invalid_argument("LearnerConfig: obs_shape and core_shape must be non-empty and "
                                "of equal length");
  }
  for (size_t n = 0; n < obs_shape.size(); ++n) {
    if (obs_shape[n] < 1 || core_shape[n] < 1) {
      throw std::invalid_argument("LearnerConfig: extents of mode " + std::to_string(n) +
                                  " must be positive");
    }
  }
  if (!(lambda0 > 0.0 && lambda0 <= 1.0)) {
    throw std::invalid_argument("LearnerConfig: lambda0 must lie in (0, 1], got " +
                                std::to_string(lambda0));
  }
  if (tau_sched < 1) {
    throw std::invalid_argument("LearnerConfig: tau_sched must be positive");
  }
  if (sparsity < 0) {
    throw std::invalid_argument("LearnerConfig: sparsity must be non-negative");
  }
  Index max_l = 1;
  for (Index l : core_shape) max_l = std::max(max_l, l);
  if (t_window > 0 && t_window < max_l && !allow_short_window) {
    throw std::invalid_argument(
        "LearnerConfig: t_window " + std::to_string(t_window) + " is below max mode size " +
        std::to_string(max_l) + " (full-rank statistics need a window of at least max_n L_n; "
        "set allow_short_window to override)");
  }
  if (eps_reg <= 0.0 || eps_denom <= 0.0 || alpha_max <= 0.0) {
    throw std::invalid_argument("LearnerConfig: eps_reg, eps_denom and alpha_max must be positive");
  }
}

WindowedStats::WindowedStats(Index dict_rows, Index dict_cols, long capacity)
    : r_(Matrix::Zero(dict_cols, dict_cols)),
      p_(Matrix::Zero(dict_rows, dict_cols)),
      capacity_(capacity) {}

WindowedStats::Increments WindowedStats::update(const Matrix& a, const Matrix& b, double mu,
                                                double lambda_prev) {
  for (auto& e : window_) e.lambda_tag *= lambda_prev;

  Increments inc{mu * a, mu * b};
  if (static_cast<long>(window_.size()) == capacity_) {
    const Entry& old = window_.front();
    inc.s_inc -= old.lambda_tag * old.mu * old.a;
    inc.q_inc -= old.lambda_tag * old.mu * old.b;
    window_.pop_front();
  }
  r_ = lambda_prev * r_ + inc.s_inc;
  r_ = 0.5 * (r_ + r_.transpose()).eval();  // suppress round-off asymmetry
  p_ = lambda_prev * p_ + inc.q_inc;
  window_.push_back(Entry{a, b, mu, 1.0});
  return inc;
}

double forgetting_schedule(long t, double lambda0, long tau_sched) {
  if (t >= tau_sched) return 1.0;
  const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(tau_sched);
  const double q = frac * frac;
  return 1.0 - (1.0 - lambda0) * q * q;
}

double sample_weight(const Matrix& h_hat, const Matrix& a, double eps_denom, bool* degenerate) {
  const double tr = a.trace();
  if (degenerate) *degenerate = false;
  if (!(tr > eps_denom)) {
    if (degenerate) *degenerate = true;
    return 1.0;
  }
  return 1.0 / (1.0 + h_hat.norm() / std::sqrt(tr));
}

ArrivalStats compute_arrivals(const DenseTensor& x, const SparseCore& core,
                              const DictionarySet& dicts, Index mode) {
  const DenseTensor s_partial = partial_reconstruct_excluding(densify(core), dicts, mode);
  return ArrivalStats{contract_all_but_n(s_partial, s_partial, mode),
                      contract_all_but_n(x, s_partial, mode)};
}

Matrix a_priori_gradient(const Matrix& g_post_prev, double lambda_prev, const Matrix& psi_prev,
                         const Matrix& s_inc, const Matrix& q_inc) {
  return lambda_prev * g_post_prev + psi_prev * s_inc - q_inc;
}

Matrix direction_sd(const Matrix& g) { return -g; }

QnDirection direction_qn(const Matrix& g, const Matrix& c_prev, double eps_denom) {
  QnDirection out{-g * c_prev, false};
  const double descent = frobenius_inner(out.d, g);
  if (!(descent < -eps_denom * g.norm() * out.d.norm())) {
    out.d = -g;
    out.fell_back = true;
  }
  return out;
}

LineSearchResult exact_line_search(const Matrix& d, const Matrix& g, const Matrix& r,
                                   double eps_denom, double alpha_max) {
  LineSearchResult out;
  out.h = d * r;
  const double num = -frobenius_inner(d, g);
  const double den = frobenius_inner(d, out.h);
  const double d2 = d.squaredNorm();
  if (!(den > eps_denom * d2)) {
    const double raw = den != 0.0 ? num / den : std::numeric_limits<double>::infinity();
    out.alpha = std::clamp(std::isfinite(raw) ? raw : alpha_max, 0.0, alpha_max);
    out.clipped = true;
    return out;
  }
  out.alpha = num / den;
  return out;
}

Matrix dual_posterior_update(const Matrix& g, double alpha, const Matrix& h) {
  return g + alpha * h;
}

BfgsResult bfgs_update(const Matrix& c_prev, const Matrix& d, const Matrix& h, double eps_reg) {
  const Matrix dht = d * h.transpose();
  Eigen::FullPivLU<Matrix> lu(dht);
  lu.setThreshold(eps_reg);
  if (!lu.isInvertible()) {
    return BfgsResult{c_prev, true};
  }
  const Matrix f = lu.solve(d);
  const Index l = c_prev.rows();
  const Matrix left = Matrix::Identity(l, l) - f.transpose() * h;
  const Matrix right = Matrix::Identity(l, l) - h.transpose() * f;
  return BfgsResult{left * c_prev * right + d.transpose() * f, false};
}

Matrix project_unit_columns(const Matrix& psi, std::mt19937_64* rng, bool* replaced_zero_column) {
  if (replaced_zero_column) *replaced_zero_column = false;
  Matrix out = psi;
  std::mt19937_64 fallback(0x9e3779b97f4a7c15ull);
  std::mt19937_64& gen = rng ? *rng : fallback;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index j = 0; j < out.cols(); ++j) {
    double norm = out.col(j).norm();
    if (norm == 0.0) {
      if (replaced_zero_column) *replaced_zero_column = true;
      do {
        for (Index i = 0; i < out.rows(); ++i) out(i, j) = gauss(gen);
        norm = out.col(j).norm();
      } while (norm == 0.0);
    }
    out.col(j) /= norm;
  }
  return out;
}

double mode_cost(const Matrix& psi, const Matrix& r, const Matrix& p) {
  return 0.5 * frobenius_inner(psi * r, psi) - frobenius_inner(p, psi);
}

OmdlLearner::OmdlLearner(LearnerConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  const Index n_modes = cfg_.mode_count();
  dicts_.reserve(static_cast<size_t>(n_modes));
  modes_.reserve(static_cast<size_t>(n_modes));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index n = 0; n < n_modes; ++n) {
    const Index j = cfg_.obs_shape[static_cast<size_t>(n)];
    const Index l = cfg_.core_shape[static_cast<size_t>(n)];
    Matrix psi(j, l);
    for (Index c = 0; c < l; ++c)
      for (Index r = 0; r < j; ++r) psi(r, c) = gauss(rng_);
    dicts_.push_back(project_unit_columns(psi, &rng_));
    ModeState ms;
    ms.stats = WindowedStats(j, l, cfg_.resolved_window());
    ms.g_post = Matrix::Zero(j, l);
    ms.c = Matrix::Identity(l, l);
    modes_.push_back(std::move(ms));
  }
}

OmdlLearner::OmdlLearner(LearnerConfig cfg, DictionarySet initial) : OmdlLearner(std::move(cfg)) {
  if (static_cast<Index>(initial.size()) != cfg_.mode_count()) {
    throw std::invalid_argument("OmdlLearner: warm start needs one dictionary per mode");
  }
  for (Index n = 0; n < cfg_.mode_count(); ++n) {
    const auto& psi = initial[static_cast<size_t>(n)];
    if (psi.rows() != cfg_.obs_shape[static_cast<size_t>(n)] ||
        psi.cols() != cfg_.core_shape[static_cast<size_t>(n)]) {
      throw std::invalid_argument("OmdlLearner: warm-start dictionary of mode " +
                                  std::to_string(n) + " has the wrong shape");
    }
  }
  dicts_ = std::move(initial);
}

DictionarySet OmdlLearner::dictionaries() const {
  DictionarySet out;
  out.reserve(dicts_.size());
  for (const auto& psi : dicts_) out.push_back(project_unit_columns(psi));
  return out;
}

StepReport OmdlLearner::step(const DenseTensor& x) {
  if (cfg_.sparsity == 0) {  // degenerate: nothing to code
    SparseCore empty;
    empty.shape = cfg_.core_shape;
    return step(x, empty);
  }
  CodingReport coding;
  const SparseCore core = code_omp(x, dictionaries(), cfg_.sparsity, &coding);
  StepReport rep = step(x, core);
  rep.coder_dropped_atoms = coding.dropped_atoms;
  return rep;
}

StepReport OmdlLearner::step(const DenseTensor& x, const SparseCore& core) {
  ++t_;
  const double lambda_prev = forgetting_schedule(t_ - 1, cfg_.lambda0, cfg_.tau_sched);

  StepReport rep;
  rep.t = t_;
  rep.lambda_prev = lambda_prev;
  rep.coded_nnz = core.nnz();

  const Index n_modes = cfg_.mode_count();
  double shared_mu = 1.0;
  for (Index n = 0; n < n_modes; ++n) {
    ModeState& ms = modes_[static_cast<size_t>(n)];
    Matrix& psi = dicts_[static_cast<size_t>(n)];
    ModeReport mr;
    StepDebug dbg;

    // Arrivals use the freshest dictionaries: modes before n are already
    // updated within this step.
    const ArrivalStats arr = compute_arrivals(x, core, dicts_, n);

    double mu = 1.0;
    if (cfg_.use_sample_weight) {
      if (cfg_.shared_mode1_weight && n > 0) {
        mu = shared_mu;
      } else {
        const Matrix h_raw = psi * arr.a - arr.b;
        mu = sample_weight(h_raw, arr.a, cfg_.eps_denom, &mr.mu_degenerate);
        if (n == 0) shared_mu = mu;
      }
    }
    mr.mu = mu;

    const auto inc = ms.stats.update(arr.a, arr.b, mu, lambda_prev);
    const Matrix g = a_priori_gradient(ms.g_post, lambda_prev, psi, inc.s_inc, inc.q_inc);
    mr.grad_norm = g.norm();
    mr.cost_before = mode_cost(psi, ms.stats.r(), ms.stats.p());

    if (record_debug_) {
      dbg.psi_before = psi;
      dbg.g = g;
      dbg.s_inc = inc.s_inc;
      dbg.q_inc = inc.q_inc;
      dbg.a = arr.a;
      dbg.b = arr.b;
    }

    Matrix d;
    mr.used = cfg_.direction;
    if (g.norm() == 0.0) {
      d = Matrix::Zero(g.rows(), g.cols());
    } else if (cfg_.direction == Direction::QuasiNewton) {
      QnDirection qd = direction_qn(g, ms.c, cfg_.eps_denom);
      mr.qn_fallback = qd.fell_back;
      if (qd.fell_back) {
        ms.c = Matrix::Identity(ms.c.rows(), ms.c.cols());
        mr.used = Direction::SteepestDescent;
      }
      d = std::move(qd.d);
    } else {
      d = direction_sd(g);
    }

    if (d.norm() == 0.0) {
      // vanished gradient: no step, carry G forward
      ms.g_post = g;
      mr.cost_after = mr.cost_before;
      rep.modes.push_back(mr);
      if (record_debug_) {
        dbg.d = d;
        dbg.h = Matrix::Zero(d.rows(), d.cols());
        dbg.g_hat = g;
        dbg.psi_after = psi;
        rep.debug.push_back(std::move(dbg));
      }
      continue;
    }

    const LineSearchResult ls = exact_line_search(d, g, ms.stats.r(), cfg_.eps_denom,
                                                  cfg_.alpha_max);
    mr.alpha = ls.alpha;
    mr.ls_clipped = ls.clipped;
    mr.stepped = true;

    psi += ls.alpha * d;
    ms.g_post = dual_posterior_update(g, ls.alpha, ls.h);

    if (cfg_.direction == Direction::QuasiNewton && !mr.qn_fallback) {
      BfgsResult br = bfgs_update(ms.c, d, ls.h, cfg_.eps_reg);
      mr.bfgs_skipped = br.skipped;
      if (!br.skipped) ms.c = std::move(br.c);
    }

    mr.cost_after = mode_cost(psi, ms.stats.r(), ms.stats.p());

    if (cfg_.project_every_step) {
      // The statistics are not rescaled by the projection map; G_post is
      // refreshed from its direct definition so the next step's recursion
      // starts from the dictionary actually kept.
      bool replaced = false;
      psi = project_unit_columns(psi, &rng_, &replaced);
      ms.g_post = psi * ms.stats.r() - ms.stats.p();
    }

    if (record_debug_) {
      dbg.d = std::move(d);
      dbg.h = ls.h;
      dbg.g_hat = ms.g_post;
      dbg.psi_after = psi;
      rep.debug.push_back(std::move(dbg));
    }
    rep.modes.push_back(mr);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Snapshot format (version 1, native endianness):
//   magic "OMDLSNP1"
//   u32 version
//   config: mode count, obs/core extents, sparsity, direction, lambda0,
//           tau_sched, t_window, flags, eps/alpha, seed
//   iteration counter
//   per mode: Psi, R, P, G_post, C, window entries (A, B, mu, lambda_tag)
// All scalars are fixed-width; all matrices are raw column-major doubles.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'M', 'D', 'L', 'S', 'N', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("snapshot: truncated stream");
  return v;
}

void put_matrix(std::ostream& os, const Matrix& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double)) * m.size());
}

Matrix get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows * cols > (1ll << 28)) {
    throw std::runtime_error("snapshot: implausible matrix header");
  }
  Matrix m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.size());
  if (!is) throw std::runtime_error("snapshot: truncated matrix payload");
  return m;
}

}  // namespace

class LearnerSnapshotIo {
public:
  static void save(const OmdlLearner& lrn, std::ostream& os) {
    os.write(kMagic, sizeof(kMagic));
    put(os, kVersion);
    const LearnerConfig& c = lrn.cfg_;
    put<std::int64_t>(os, c.mode_count());
    for (Index j : c.obs_shape) put<std::int64_t>(os, j);
    for (Index l : c.core_shape) put<std::int64_t>(os, l);
    put<std::int64_t>(os, c.sparsity);
    put<std::uint8_t>(os, c.direction == Direction::QuasiNewton ? 1 : 0);
    put(os, c.lambda0);
    put<std::int64_t>(os, c.tau_sched);
    put<std::int64_t>(os, c.t_window);
    put<std::uint8_t>(os, c.allow_short_window);
    put<std::uint8_t>(os, c.use_sample_weight);
    put<std::uint8_t>(os, c.shared_mode1_weight);
    put<std::uint8_t>(os, c.project_every_step);
    put(os, c.eps_reg);
    put(os, c.eps_denom);
    put(os, c.alpha_max);
    put(os, c.seed);

    put<std::int64_t>(os, lrn.t_);
    std::ostringstream rng_state;
    rng_state << lrn.rng_;
    const std::string rs = rng_state.str();
    put<std::int64_t>(os, static_cast<std::int64_t>(rs.size()));
    os.write(rs.data(), static_cast<std::streamsize>(rs.size()));

    for (Index n = 0; n < c.mode_count(); ++n) {
      const ModeState& ms = lrn.modes_[static_cast<size_t>(n)];
      put_matrix(os, lrn.dicts_[static_cast<size_t>(n)]);
      put_matrix(os, ms.stats.r_);
      put_matrix(os, ms.stats.p_);
      put_matrix(os, ms.g_post);
      put_matrix(os, ms.c);
      put<std::int64_t>(os, ms.stats.capacity_);
      put<std::int64_t>(os, static_cast<std::int64_t>(ms.stats.window_.size()));
      for (const auto& e : ms.stats.window_) {
        put_matrix(os, e.a);
        put_matrix(os, e.b);
        put(os, e.mu);
        put(os, e.lambda_tag);
      }
    }
    if (!os) throw std::runtime_error("snapshot: write failed");
  }

  static OmdlLearner load(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kMagic)) {
      throw std::runtime_error("snapshot: bad magic (not a learner snapshot)");
    }
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion) {
      throw std::runtime_error("snapshot: unsupported version " + std::to_string(version));
    }
    LearnerConfig c;
    const auto n_modes = get<std::int64_t>(is);
    if (n_modes < 1 || n_modes > 8) throw std::runtime_error("snapshot: bad mode count");
    c.obs_shape.resize(static_cast<size_t>(n_modes));
    c.core_shape.resize(static_cast<size_t>(n_modes));
    for (auto& j : c.obs_shape) j = get<std::int64_t>(is);
    for (auto& l : c.core_shape) l = get<std::int64_t>(is);
    c.sparsity = get<std::int64_t>(is);
    c.direction = get<std::uint8_t>(is) ? Direction::QuasiNewton : Direction::SteepestDescent;
    c.lambda0 = get<double>(is);
    c.tau_sched = get<std::int64_t>(is);
    c.t_window = get<std::int64_t>(is);
    c.allow_short_window = get<std::uint8_t>(is);
    c.use_sample_weight = get<std::uint8_t>(is);
    c.shared_mode1_weight = get<std::uint8_t>(is);
    c.project_every_step = get<std::uint8_t>(is);
    c.eps_reg = get<double>(is);
    c.eps_denom = get<double>(is);
    c.alpha_max = get<double>(is);
    c.seed = get<std::uint64_t>(is);

    OmdlLearner lrn(c);
    lrn.t_ = get<std::int64_t>(is);
    const auto rng_len = get<std::int64_t>(is);
    if (rng_len < 0 || rng_len > (1 << 20)) throw std::runtime_error("snapshot: bad rng block");
    std::string rs(static_cast<size_t>(rng_len), '\0');
    is.read(rs.data(), rng_len);
    std::istringstream rng_state(rs);
    rng_state >> lrn.rng_;

    for (Index n = 0; n < c.mode_count(); ++n) {
      ModeState& ms = lrn.modes_[static_cast<size_t>(n)];
      lrn.dicts_[static_cast<size_t>(n)] = get_matrix(is);
      ms.stats.r_ = get_matrix(is);
      ms.stats.p_ = get_matrix(is);
      ms.g_post = get_matrix(is);
      ms.c = get_matrix(is);
      ms.stats.capacity_ = get<std::int64_t>(is);
      const auto wlen = get<std::int64_t>(is);
      if (wlen < 0 || wlen > ms.stats.capacity_) throw std::runtime_error("snapshot: bad window");
      ms.stats.window_.clear();
      for (std::int64_t i = 0; i < wlen; ++i) {
        WindowedStats::Entry e;
        e.a = get_matrix(is);
        e.b = get_matrix(is);
        e.mu = get<double>(is);
        e.lambda_tag = get<double>(is);
        ms.stats.window_.push_back(std::move(e));
      }
    }
    return lrn;
  }
};

void OmdlLearner::save_snapshot(std::ostream& os) const { LearnerSnapshotIo::save(*this, os); }

OmdlLearner OmdlLearner::load_snapshot(std::istream& is) { return LearnerSnapshotIo::load(is); }

void OmdlLearner::save_snapshot(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("snapshot: cannot open " + path + " for writing");
  save_snapshot(os);
}

OmdlLearner OmdlLearner::load_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("snapshot: cannot open " + path);
  return load_snapshot(is);
}

}  // namespace omdl
