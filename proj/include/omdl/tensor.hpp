#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <vector>

namespace omdl {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Ordered collection of per-mode dictionaries; dicts[n] has shape J_n x L_n.
using DictionarySet = std::vector<Matrix>;

/// Dense N-way real array, 1 <= N <= 8.
///
/// Linearization order: row-major with the LAST mode fastest, i.e. the
/// element at (i_1, ..., i_N) lives at offset
///   ((i_1 * d_2 + i_2) * d_3 + i_3) * ... + i_N.
/// All unfoldings below use the matching complement ordering, so the stored
/// vector of a tensor equals its mode-1 unfolding read row by row.
class DenseTensor {
public:
  explicit DenseTensor(std::vector<Index> shape);
  DenseTensor(std::vector<Index> shape, Eigen::VectorXd data);

  Index order() const { return static_cast<Index>(shape_.size()); }
  const std::vector<Index>& shape() const { return shape_; }
  Index extent(Index n) const { return shape_[static_cast<size_t>(n)]; }
  Index numel() const { return data_.size(); }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  double& at(std::initializer_list<Index> idx) { return data_[offset_of(idx)]; }
  double at(std::initializer_list<Index> idx) const { return data_[offset_of(idx)]; }
  double& at(const std::vector<Index>& idx) { return data_[offset_of(idx)]; }
  double at(const std::vector<Index>& idx) const { return data_[offset_of(idx)]; }

  void set_zero() { data_.setZero(); }

  /// Linear offset of a full index tuple under the documented layout.
  Index offset_of(std::initializer_list<Index> idx) const;
  Index offset_of(const std::vector<Index>& idx) const;

  double frobenius_norm() const { return data_.norm(); }

private:
  std::vector<Index> shape_;
  Eigen::VectorXd data_;
};

/// Mode-n matricization. Row i holds all elements with i_n == i; columns
/// enumerate the remaining indices lexicographically, last mode fastest
/// (consistent with the DenseTensor layout).
Matrix unfold(const DenseTensor& t, Index mode);

/// Inverse of unfold for the given full shape.
DenseTensor refold(const Matrix& m, Index mode, std::vector<Index> shape);

/// T x_n M: contracts mode n of the tensor with the columns of M.
/// Requires M.cols() == t.extent(mode); the result has extent M.rows() there.
DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, Index mode);

/// All-but-n contraction of two tensors agreeing on every mode except
/// possibly mode n. Equals unfold(a, n) * unfold(b, n)^T.
Matrix contract_all_but_n(const DenseTensor& a, const DenseTensor& b, Index mode);

/// S x_1 dicts[0] x_2 ... x_N dicts[N-1].
DenseTensor tucker_reconstruct(const DenseTensor& core, const DictionarySet& dicts);

/// Same but mode `skip` is left untouched (keeps its core extent).
DenseTensor partial_reconstruct_excluding(const DenseTensor& core,
                                          const DictionarySet& dicts, Index skip);

/// Sum of entrywise products.
double frobenius_inner(const DenseTensor& a, const DenseTensor& b);
double frobenius_inner(const Matrix& a, const Matrix& b);

}  // namespace omdl
