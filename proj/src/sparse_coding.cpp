#include "omdl/sparse_coding.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace omdl {

namespace {

void check_dicts_against(const DictionarySet& dicts, const DenseTensor& x, const char* op) {
  if (static_cast<Index>(dicts.size()) != x.order()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(dicts.size()) +
                                " dictionaries for an order-" + std::to_string(x.order()) +
                                " observation");
  }
  for (Index n = 0; n < x.order(); ++n) {
    if (dicts[static_cast<size_t>(n)].rows() != x.extent(n)) {
      std::ostringstream os;
      os << op << ": mode " << n << " dictionary has " << dicts[static_cast<size_t>(n)].rows()
         << " rows but the observation extent is " << x.extent(n);
      throw std::invalid_argument(os.str());
    }
  }
}

std::vector<Index> core_shape_of(const DictionarySet& dicts) {
  std::vector<Index> shape;
  shape.reserve(dicts.size());
  for (const auto& d : dicts) shape.push_back(d.cols());
  return shape;
}

// <separable atom at `idx`, t> without forming the atom.
double atom_inner(const DenseTensor& t, const DictionarySet& dicts,
                  const std::vector<Index>& idx) {
  DenseTensor v = t;
  for (Index n = 0; n < t.order(); ++n) {
    // contract mode 0 of the shrinking tensor with the chosen column
    v = mode_n_product(v, dicts[static_cast<size_t>(n)].col(idx[static_cast<size_t>(n)]).transpose(),
                       0);
    if (v.order() > 1) {
      std::vector<Index> rest(v.shape().begin() + 1, v.shape().end());
      v = DenseTensor(std::move(rest), v.data());
    }
  }
  return v.data()[0];
}

// out += coeff * (outer product of the per-mode columns at `idx`)
void accumulate_atom(DenseTensor& out, const DictionarySet& dicts, const std::vector<Index>& idx,
                     double coeff) {
  const Index n_modes = out.order();
  std::vector<Index> it(static_cast<size_t>(n_modes), 0);
  auto& data = out.data();
  for (Index off = 0; off < out.numel(); ++off) {
    double v = coeff;
    for (Index n = 0; n < n_modes; ++n) {
      v *= dicts[static_cast<size_t>(n)](it[static_cast<size_t>(n)], idx[static_cast<size_t>(n)]);
    }
    data[off] += v;
    for (Index n = n_modes - 1; n >= 0; --n) {
      if (++it[static_cast<size_t>(n)] < out.extent(n)) break;
      it[static_cast<size_t>(n)] = 0;
    }
  }
}

// Gram of the selected separable atoms: entrywise product over modes of the
// per-mode column inner products.
Matrix selected_gram(const DictionarySet& dicts, const std::vector<std::vector<Index>>& support) {
  const Index k = static_cast<Index>(support.size());
  Matrix g = Matrix::Ones(k, k);
  for (size_t n = 0; n < dicts.size(); ++n) {
    const Matrix& psi = dicts[n];
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j <= i; ++j) {
        const double ip = psi.col(support[static_cast<size_t>(i)][n])
                              .dot(psi.col(support[static_cast<size_t>(j)][n]));
        g(i, j) *= ip;
        if (i != j) g(j, i) *= ip;
      }
    }
  }
  return g;
}

std::vector<Index> decode_tuple(Index offset, const std::vector<Index>& shape) {
  std::vector<Index> idx(shape.size());
  for (size_t n = shape.size(); n-- > 0;) {
    idx[n] = offset % shape[n];
    offset /= shape[n];
  }
  return idx;
}

}  // namespace

DenseTensor densify(const SparseCore& core) {
  DenseTensor t(core.shape);
  for (const auto& e : core.entries) {
    t.at(e.index) += e.value;
  }
  return t;
}

DenseTensor sparse_reconstruct(const SparseCore& core, const DictionarySet& dicts) {
  if (core.shape.size() != dicts.size()) {
    throw std::invalid_argument("sparse_reconstruct: " + std::to_string(dicts.size()) +
                                " dictionaries for an order-" + std::to_string(core.shape.size()) +
                                " core");
  }
  std::vector<Index> out_shape;
  for (size_t n = 0; n < dicts.size(); ++n) {
    if (dicts[n].cols() != core.shape[n]) {
      throw std::invalid_argument("sparse_reconstruct: mode " + std::to_string(n) +
                                  " dictionary has " + std::to_string(dicts[n].cols()) +
                                  " columns but the core extent is " +
                                  std::to_string(core.shape[n]));
    }
    out_shape.push_back(dicts[n].rows());
  }
  DenseTensor out(std::move(out_shape));
  for (const auto& e : core.entries) {
    accumulate_atom(out, dicts, e.index, e.value);
  }
  return out;
}

SparseCore code_omp(const DenseTensor& x, const DictionarySet& dicts, Index k,
                    CodingReport* report) {
  check_dicts_against(dicts, x, "code_omp");
  const std::vector<Index> core_shape = core_shape_of(dicts);
  Index grid = 1;
  for (Index d : core_shape) grid *= d;
  if (k < 1 || k > grid) {
    throw std::invalid_argument("code_omp: k = " + std::to_string(k) +
                                " outside [1, " + std::to_string(grid) + "]");
  }

  CodingReport local;
  CodingReport& rep = report ? *report : local;

  std::vector<std::vector<Index>> support;
  Eigen::VectorXd coeffs;
  std::set<Index> excluded;  // linear offsets dropped or already selected
  DenseTensor residual = x;

  // Drops cost an iteration but not a slot; bound the total loop.
  const Index max_iters = k + 8;
  for (Index iter = 0; iter < max_iters && static_cast<Index>(support.size()) < k; ++iter) {
    // correlation of every separable atom with the residual, mode by mode
    DenseTensor corr = residual;
    for (Index n = 0; n < x.order(); ++n) {
      corr = mode_n_product(corr, dicts[static_cast<size_t>(n)].transpose(), n);
    }
    Index best = -1;
    double best_abs = 0.0;
    for (Index off = 0; off < corr.numel(); ++off) {
      const double a = std::abs(corr.data()[off]);
      if (std::isfinite(a) && a > best_abs && !excluded.count(off)) {
        best_abs = a;
        best = off;
      }
    }
    if (best < 0 || best_abs == 0.0) {
      rep.stopped_early = true;
      break;
    }
    excluded.insert(best);
    support.push_back(decode_tuple(best, core_shape));

    const Index m = static_cast<Index>(support.size());
    Matrix gram = selected_gram(dicts, support);
    Eigen::VectorXd rhs(m);
    for (Index i = 0; i < m; ++i) rhs[i] = atom_inner(x, dicts, support[static_cast<size_t>(i)]);

    Eigen::ColPivHouseholderQR<Matrix> qr(gram);
    if (qr.rank() < m) {
      support.pop_back();
      ++rep.dropped_atoms;
      continue;
    }
    coeffs = qr.solve(rhs);

    residual = x;
    DenseTensor recon(x.shape());
    for (Index i = 0; i < m; ++i) {
      accumulate_atom(recon, dicts, support[static_cast<size_t>(i)], coeffs[i]);
    }
    residual.data() -= recon.data();
  }

  SparseCore core;
  core.shape = core_shape;
  for (size_t i = 0; i < support.size(); ++i) {
    core.entries.push_back({support[i], coeffs[static_cast<Index>(i)]});
  }
  return core;
}

SparseCore code_oracle_support(const DenseTensor& x, const DictionarySet& dicts,
                               const std::vector<std::vector<Index>>& support,
                               CodingReport* report) {
  check_dicts_against(dicts, x, "code_oracle_support");
  const std::vector<Index> core_shape = core_shape_of(dicts);
  for (const auto& idx : support) {
    if (idx.size() != core_shape.size()) {
      throw std::invalid_argument("code_oracle_support: support tuple of length " +
                                  std::to_string(idx.size()) + " for order-" +
                                  std::to_string(core_shape.size()) + " core");
    }
    for (size_t n = 0; n < idx.size(); ++n) {
      if (idx[n] < 0 || idx[n] >= core_shape[n]) {
        throw std::invalid_argument("code_oracle_support: index " + std::to_string(idx[n]) +
                                    " out of range for mode " + std::to_string(n));
      }
    }
  }

  SparseCore core;
  core.shape = core_shape;
  if (support.empty()) return core;

  const Index m = static_cast<Index>(support.size());
  Matrix gram = selected_gram(dicts, support);
  Eigen::VectorXd rhs(m);
  for (Index i = 0; i < m; ++i) rhs[i] = atom_inner(x, dicts, support[static_cast<size_t>(i)]);

  Eigen::VectorXd coeffs;
  Eigen::ColPivHouseholderQR<Matrix> qr(gram);
  if (qr.rank() < m) {
    if (report) report->ridge_fallback = true;
    const double eps = 1e-10 * std::max(1.0, gram.diagonal().mean());
    coeffs = (gram + eps * Matrix::Identity(m, m)).ldlt().solve(rhs);
  } else {
    coeffs = qr.solve(rhs);
  }

  for (size_t i = 0; i < support.size(); ++i) {
    core.entries.push_back({support[i], coeffs[static_cast<Index>(i)]});
  }
  return core;
}

}  // namespace omdl
