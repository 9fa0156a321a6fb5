#include "omdl/tmod.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace omdl {

Matrix tmod_update(const Matrix& r, const Matrix& p, double ridge) {
  if (r.rows() != r.cols()) {
    throw std::invalid_argument("tmod_update: R must be square, got " + std::to_string(r.rows()) +
                                "x" + std::to_string(r.cols()));
  }
  if (p.cols() != r.rows()) {
    throw std::invalid_argument("tmod_update: P has " + std::to_string(p.cols()) +
                                " columns but R is of size " + std::to_string(r.rows()));
  }
  Matrix reg = r;
  reg.diagonal().array() += ridge;
  // Solve (R + ridge I) Psi^T = P^T; a singular system is allowed to produce
  // non-finite entries (this is the instability under study, not an error).
  return reg.partialPivLu().solve(p.transpose()).transpose();
}

TmodLearner::TmodLearner(LearnerConfig cfg, double ridge)
    : cfg_(std::move(cfg)), ridge_(ridge), rng_(cfg_.seed) {
  cfg_.validate();
  if (ridge_ < 0.0) throw std::invalid_argument("TmodLearner: ridge must be >= 0");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index n = 0; n < cfg_.mode_count(); ++n) {
    const Index j = cfg_.obs_shape[static_cast<size_t>(n)];
    const Index l = cfg_.core_shape[static_cast<size_t>(n)];
    Matrix psi(j, l);
    for (Index c = 0; c < l; ++c)
      for (Index r = 0; r < j; ++r) psi(r, c) = gauss(rng_);
    dicts_.push_back(project_unit_columns(psi, &rng_));
    stats_.emplace_back(j, l, cfg_.resolved_window());
  }
}

TmodLearner::TmodLearner(LearnerConfig cfg, double ridge, DictionarySet initial)
    : TmodLearner(std::move(cfg), ridge) {
  if (static_cast<Index>(initial.size()) != cfg_.mode_count()) {
    throw std::invalid_argument("TmodLearner: warm start needs one dictionary per mode");
  }
  for (Index n = 0; n < cfg_.mode_count(); ++n) {
    const auto& psi = initial[static_cast<size_t>(n)];
    if (psi.rows() != cfg_.obs_shape[static_cast<size_t>(n)] ||
        psi.cols() != cfg_.core_shape[static_cast<size_t>(n)]) {
      throw std::invalid_argument("TmodLearner: warm-start dictionary of mode " +
                                  std::to_string(n) + " has the wrong shape");
    }
  }
  dicts_ = std::move(initial);
}

DictionarySet TmodLearner::dictionaries() const {
  DictionarySet out;
  out.reserve(dicts_.size());
  for (const auto& psi : dicts_) out.push_back(project_unit_columns(psi));
  return out;
}

StepReport TmodLearner::step(const DenseTensor& x) {
  if (cfg_.sparsity == 0) {
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

StepReport TmodLearner::step(const DenseTensor& x, const SparseCore& core) {
  ++t_;
  const double lambda_prev = forgetting_schedule(t_ - 1, cfg_.lambda0, cfg_.tau_sched);

  StepReport rep;
  rep.t = t_;
  rep.lambda_prev = lambda_prev;
  rep.coded_nnz = core.nnz();

  double shared_mu = 1.0;
  for (Index n = 0; n < cfg_.mode_count(); ++n) {
    WindowedStats& st = stats_[static_cast<size_t>(n)];
    Matrix& psi = dicts_[static_cast<size_t>(n)];
    ModeReport mr;

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

    st.update(arr.a, arr.b, mu, lambda_prev);
    mr.cost_before = mode_cost(psi, st.r(), st.p());
    psi = tmod_update(st.r(), st.p(), ridge_);
    mr.cost_after = mode_cost(psi, st.r(), st.p());
    mr.stepped = true;
    rep.modes.push_back(mr);
  }
  return rep;
}

}  // namespace omdl
