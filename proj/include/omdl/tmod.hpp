#pragma once

#include "omdl/learner.hpp"

namespace omdl {

/// Closed-form per-mode dictionary update: Psi = P (R + ridge I)^{-1}, solved
/// as a linear system. With ridge = 0 a singular R yields non-finite entries
/// that propagate to the caller; the harness records them as divergence.
Matrix tmod_update(const Matrix& r, const Matrix& p, double ridge);

/// Per-mode closed-form baseline sharing the learner's statistics pipeline
/// (same coder, arrivals, forgetting, window and correcting weight); only the
/// dictionary update rule differs.
class TmodLearner {
public:
  TmodLearner(LearnerConfig cfg, double ridge);
  TmodLearner(LearnerConfig cfg, double ridge, DictionarySet initial);

  StepReport step(const DenseTensor& x);
  StepReport step(const DenseTensor& x, const SparseCore& core);

  const LearnerConfig& config() const { return cfg_; }
  double ridge() const { return ridge_; }
  long iteration() const { return t_; }

  DictionarySet dictionaries() const;
  const DictionarySet& raw_dictionaries() const { return dicts_; }
  const WindowedStats& mode_stats(Index n) const { return stats_[static_cast<size_t>(n)]; }

private:
  LearnerConfig cfg_;
  double ridge_ = 0.0;
  long t_ = 0;
  DictionarySet dicts_;
  std::vector<WindowedStats> stats_;
  std::mt19937_64 rng_;
};

}  // namespace omdl
