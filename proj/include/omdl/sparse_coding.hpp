#pragma once

#include "omdl/tensor.hpp"

#include <vector>

namespace omdl {

/// K-sparse core tensor stored as (index tuple, value) pairs.
struct SparseCore {
  struct Entry {
    std::vector<Index> index;
    double value = 0.0;
  };

  std::vector<Index> shape;
  std::vector<Entry> entries;

  Index nnz() const { return static_cast<Index>(entries.size()); }
};

/// Expands a SparseCore into a DenseTensor of the same shape.
DenseTensor densify(const SparseCore& core);

/// Sum of the core's separable atoms scaled by their values; equals
/// tucker_reconstruct(densify(core), dicts) without densifying.
DenseTensor sparse_reconstruct(const SparseCore& core, const DictionarySet& dicts);

/// Degeneracy events encountered while coding; all are survivable.
struct CodingReport {
  int dropped_atoms = 0;      // selected atoms discarded for a singular LS block
  bool ridge_fallback = false;  // oracle refit resorted to a ridge solve
  bool stopped_early = false;   // residual correlations vanished (or went non-finite)
};

/// Greedy orthogonal matching pursuit over the separable (Kronecker) atom
/// grid of `dicts`. Each step picks the atom tuple with the largest absolute
/// correlation to the residual (computed mode-wise, the Kronecker product is
/// never formed) and re-fits all selected coefficients by least squares.
///
/// Correlations use the dictionary columns as supplied; callers wanting
/// unit-norm atom semantics project the dictionaries first. A zero (or
/// non-finite) residual stops the pursuit early, so the result may hold
/// fewer than `k` entries.
SparseCore code_omp(const DenseTensor& x, const DictionarySet& dicts, Index k,
                    CodingReport* report = nullptr);

/// Least-squares coefficients on a fixed support of atom tuples. A singular
/// normal system falls back to a ridge solve (epsilon 1e-10 times the mean
/// Gram diagonal) and flags the event.
SparseCore code_oracle_support(const DenseTensor& x, const DictionarySet& dicts,
                               const std::vector<std::vector<Index>>& support,
                               CodingReport* report = nullptr);

}  // namespace omdl
