#include "omdl/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace omdl {

namespace {

void check_shape(const std::vector<Index>& shape) {
  if (shape.empty() || shape.size() > 8) {
    throw std::invalid_argument("DenseTensor: order must be between 1 and 8, got " +
                                std::to_string(shape.size()));
  }
  for (size_t n = 0; n < shape.size(); ++n) {
    if (shape[n] < 1) {
      throw std::invalid_argument("DenseTensor: extent of mode " + std::to_string(n) +
                                  " must be positive, got " + std::to_string(shape[n]));
    }
  }
}

Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

void check_mode(const DenseTensor& t, Index mode, const char* op) {
  if (mode < 0 || mode >= t.order()) {
    std::ostringstream os;
    os << op << ": mode " << mode << " out of range for order-" << t.order() << " tensor";
    throw std::invalid_argument(os.str());
  }
}

// Extents before / at / after the given mode.
struct ModeSplit {
  Index pre = 1, dim = 1, post = 1;
};

ModeSplit split_at(const std::vector<Index>& shape, Index mode) {
  ModeSplit s;
  for (Index k = 0; k < static_cast<Index>(shape.size()); ++k) {
    Index d = shape[static_cast<size_t>(k)];
    if (k < mode)
      s.pre *= d;
    else if (k == mode)
      s.dim = d;
    else
      s.post *= d;
  }
  return s;
}

}  // namespace

DenseTensor::DenseTensor(std::vector<Index> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Eigen::VectorXd::Zero(shape_numel(shape_));
}

DenseTensor::DenseTensor(std::vector<Index> shape, Eigen::VectorXd data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("DenseTensor: shape implies " +
                                std::to_string(shape_numel(shape_)) + " elements, data has " +
                                std::to_string(data_.size()));
  }
}

Index DenseTensor::offset_of(std::initializer_list<Index> idx) const {
  return offset_of(std::vector<Index>(idx));
}

Index DenseTensor::offset_of(const std::vector<Index>& idx) const {
  if (static_cast<Index>(idx.size()) != order()) {
    throw std::invalid_argument("DenseTensor: index tuple of length " +
                                std::to_string(idx.size()) + " for order-" +
                                std::to_string(order()) + " tensor");
  }
  Index off = 0;
  for (size_t k = 0; k < shape_.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= shape_[k]) {
      throw std::invalid_argument("DenseTensor: index " + std::to_string(idx[k]) +
                                  " out of range for mode " + std::to_string(k));
    }
    off = off * shape_[k] + idx[k];
  }
  return off;
}

Matrix unfold(const DenseTensor& t, Index mode) {
  check_mode(t, mode, "unfold");
  const ModeSplit s = split_at(t.shape(), mode);
  Matrix m(s.dim, s.pre * s.post);
  const auto& d = t.data();
  for (Index pre = 0; pre < s.pre; ++pre) {
    for (Index i = 0; i < s.dim; ++i) {
      const Index base = (pre * s.dim + i) * s.post;
      for (Index post = 0; post < s.post; ++post) {
        m(i, pre * s.post + post) = d[base + post];
      }
    }
  }
  return m;
}

DenseTensor refold(const Matrix& m, Index mode, std::vector<Index> shape) {
  check_shape(shape);
  const ModeSplit s = split_at(shape, mode);
  if (mode < 0 || mode >= static_cast<Index>(shape.size()))
    throw std::invalid_argument("refold: mode " + std::to_string(mode) + " out of range");
  if (m.rows() != s.dim || m.cols() != s.pre * s.post) {
    std::ostringstream os;
    os << "refold: matrix is " << m.rows() << "x" << m.cols() << " but mode " << mode
       << " of the target shape needs " << s.dim << "x" << s.pre * s.post;
    throw std::invalid_argument(os.str());
  }
  DenseTensor t(std::move(shape));
  auto& d = t.data();
  for (Index pre = 0; pre < s.pre; ++pre) {
    for (Index i = 0; i < s.dim; ++i) {
      const Index base = (pre * s.dim + i) * s.post;
      for (Index post = 0; post < s.post; ++post) {
        d[base + post] = m(i, pre * s.post + post);
      }
    }
  }
  return t;
}

DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, Index mode) {
  check_mode(t, mode, "mode_n_product");
  if (m.cols() != t.extent(mode)) {
    std::ostringstream os;
    os << "mode_n_product: mode " << mode << " extent is " << t.extent(mode)
       << " but the matrix has " << m.cols() << " columns";
    throw std::invalid_argument(os.str());
  }
  std::vector<Index> out_shape = t.shape();
  out_shape[static_cast<size_t>(mode)] = m.rows();
  return refold(m * unfold(t, mode), mode, std::move(out_shape));
}

Matrix contract_all_but_n(const DenseTensor& a, const DenseTensor& b, Index mode) {
  check_mode(a, mode, "contract_all_but_n");
  if (a.order() != b.order()) {
    throw std::invalid_argument("contract_all_but_n: tensor orders differ (" +
                                std::to_string(a.order()) + " vs " + std::to_string(b.order()) +
                                ")");
  }
  for (Index k = 0; k < a.order(); ++k) {
    if (k != mode && a.extent(k) != b.extent(k)) {
      std::ostringstream os;
      os << "contract_all_but_n: extent mismatch on mode " << k << " (" << a.extent(k) << " vs "
         << b.extent(k) << ")";
      throw std::invalid_argument(os.str());
    }
  }
  return unfold(a, mode) * unfold(b, mode).transpose();
}

DenseTensor tucker_reconstruct(const DenseTensor& core, const DictionarySet& dicts) {
  if (static_cast<Index>(dicts.size()) != core.order()) {
    throw std::invalid_argument("tucker_reconstruct: " + std::to_string(dicts.size()) +
                                " dictionaries for an order-" + std::to_string(core.order()) +
                                " core");
  }
  DenseTensor out = core;
  for (Index n = 0; n < core.order(); ++n) {
    out = mode_n_product(out, dicts[static_cast<size_t>(n)], n);
  }
  return out;
}

DenseTensor partial_reconstruct_excluding(const DenseTensor& core, const DictionarySet& dicts,
                                          Index skip) {
  if (static_cast<Index>(dicts.size()) != core.order()) {
    throw std::invalid_argument("partial_reconstruct_excluding: " + std::to_string(dicts.size()) +
                                " dictionaries for an order-" + std::to_string(core.order()) +
                                " core");
  }
  check_mode(core, skip, "partial_reconstruct_excluding");
  DenseTensor out = core;
  for (Index n = 0; n < core.order(); ++n) {
    if (n == skip) continue;
    out = mode_n_product(out, dicts[static_cast<size_t>(n)], n);
  }
  return out;
}

double frobenius_inner(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("frobenius_inner: tensor shapes differ");
  }
  return a.data().dot(b.data());
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << "frobenius_inner: shapes differ (" << a.rows() << "x" << a.cols() << " vs " << b.rows()
       << "x" << b.cols() << ")";
    throw std::invalid_argument(os.str());
  }
  return a.cwiseProduct(b).sum();
}

}  // namespace omdl
