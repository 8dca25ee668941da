#include "cpfit/tensor.hpp"

#include <numeric>
#include <string>

#include "cpfit/errors.hpp"

namespace cpfit {

std::size_t checked_volume(std::span<const std::size_t> dims) {
  if (dims.empty()) throw DimensionError("tensor order must be at least 1");
  std::size_t volume = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
    volume *= d;
  }
  return volume;
}

template <Scalar S>
Tensor<S>::Tensor(std::vector<std::size_t> dims)
    : dims_(std::move(dims)), data_(Vec<S>::Zero(static_cast<Eigen::Index>(checked_volume(dims_)))) {}

template <Scalar S>
Tensor<S>::Tensor(std::vector<std::size_t> dims, Vec<S> data) : dims_(std::move(dims)), data_(std::move(data)) {
  if (static_cast<std::size_t>(data_.size()) != checked_volume(dims_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match the product of its dims");
  }
}

template <Scalar S>
std::size_t Tensor<S>::linear_index(std::span<const std::size_t> idx) const {
  if (idx.size() != dims_.size()) throw DimensionError("index order mismatch");
  std::size_t lin = 0;
  for (std::size_t k = idx.size(); k-- > 0;) {
    if (idx[k] >= dims_[k]) throw DimensionError("index out of range");
    lin = lin * dims_[k] + idx[k];
  }
  return lin;
}

namespace {

struct ModeSplit {
  std::size_t before = 1;  // product of dims below n
  std::size_t extent = 1;  // I_n
  std::size_t after = 1;   // product of dims above n
};

ModeSplit split_at(std::span<const std::size_t> dims, std::size_t n) {
  if (n >= dims.size()) {
    throw DimensionError("mode " + std::to_string(n) + " out of range for order " + std::to_string(dims.size()));
  }
  ModeSplit s;
  for (std::size_t k = 0; k < n; ++k) s.before *= dims[k];
  s.extent = dims[n];
  for (std::size_t k = n + 1; k < dims.size(); ++k) s.after *= dims[k];
  return s;
}

}  // namespace

template <Scalar S>
Mat<S> unfold(const Tensor<S>& t, std::size_t n) {
  const ModeSplit s = split_at(t.dims(), n);
  const auto rows = static_cast<Eigen::Index>(s.extent);
  const auto lead = static_cast<Eigen::Index>(s.before);
  Mat<S> m(rows, static_cast<Eigen::Index>(s.before * s.after));
  const S* src = t.data().data();
  for (std::size_t r = 0; r < s.after; ++r) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const S* fiber = src + (static_cast<Eigen::Index>(r) * rows + i) * lead;
      for (Eigen::Index l = 0; l < lead; ++l) m(i, l + lead * static_cast<Eigen::Index>(r)) = fiber[l];
    }
  }
  return m;
}

template <Scalar S>
Tensor<S> fold(const Mat<S>& m, const std::vector<std::size_t>& dims, std::size_t n) {
  const std::size_t volume = checked_volume(dims);
  const ModeSplit s = split_at(dims, n);
  if (static_cast<std::size_t>(m.rows()) != s.extent || static_cast<std::size_t>(m.size()) != volume) {
    throw DimensionError("fold: matrix shape does not match dims");
  }
  Tensor<S> t(dims);
  const auto rows = static_cast<Eigen::Index>(s.extent);
  const auto lead = static_cast<Eigen::Index>(s.before);
  S* dst = t.data().data();
  for (std::size_t r = 0; r < s.after; ++r) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      S* fiber = dst + (static_cast<Eigen::Index>(r) * rows + i) * lead;
      for (Eigen::Index l = 0; l < lead; ++l) fiber[l] = m(i, l + lead * static_cast<Eigen::Index>(r));
    }
  }
  return t;
}

template <Scalar S>
Mat<S> kronecker(const Mat<S>& a, const Mat<S>& b) {
  Mat<S> k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return k;
}

template <Scalar S>
Mat<S> khatri_rao(const Mat<S>& a, const Mat<S>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  }
  Mat<S> k(a.rows() * b.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      k.col(r).segment(i * b.rows(), b.rows()) = a(i, r) * b.col(r);
    }
  }
  return k;
}

template <Scalar S>
Mat<S> khatri_rao_excl(const Factors<S>& factors, std::size_t n) {
  if (n >= factors.size()) throw DimensionError("khatri_rao_excl: mode out of range");
  const Eigen::Index rank = factors[0].cols();
  for (const auto& f : factors) {
    if (f.cols() != rank) throw DimensionError("khatri_rao_excl: factors have inconsistent rank");
  }
  std::vector<std::size_t> order;
  for (std::size_t k = factors.size(); k > 0; --k) {
    if (k - 1 != n) order.push_back(k - 1);
  }
  if (order.empty()) return Mat<S>::Ones(1, rank);
  Mat<S> acc = factors[order.front()];
  for (std::size_t j = 1; j < order.size(); ++j) acc = khatri_rao<S>(acc, factors[order[j]]);
  return acc;
}

template <Scalar S>
Mat<S> hadamard(const Mat<S>& a, const Mat<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("hadamard: shape mismatch");
  return a.cwiseProduct(b);
}

template <Scalar S>
Mat<S> elementwise_div(const Mat<S>& a, const Mat<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("elementwise_div: shape mismatch");
  for (Eigen::Index k = 0; k < b.size(); ++k) {
    if (b.data()[k] == S(0)) throw DimensionError("elementwise_div: zero divisor entry");
  }
  return a.cwiseQuotient(b);
}

std::vector<std::size_t> commutation_permutation(std::size_t rows, std::size_t cols) {
  // vec(X)[i + I j] = X(i, j) = vec(X^T)[j + J i]
  std::vector<std::size_t> perm(rows * cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) perm[i + rows * j] = j + cols * i;
  }
  return perm;
}

namespace {

Mat<double> dense_from_permutation(std::span<const std::size_t> perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  Mat<double> p = Mat<double>::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) p(k, static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)])) = 1.0;
  return p;
}

}  // namespace

Mat<double> commutation(std::size_t rows, std::size_t cols) {
  return dense_from_permutation(commutation_permutation(rows, cols));
}

std::vector<std::size_t> mode_commutation_permutation(std::span<const std::size_t> dims, std::size_t n) {
  const std::size_t volume = checked_volume(dims);
  const ModeSplit s = split_at(dims, n);
  // vec(Y)[l + L i + L I_n r] = vec(Y_(n))[i + I_n (l + L r)]
  std::vector<std::size_t> perm(volume);
  for (std::size_t r = 0; r < s.after; ++r) {
    for (std::size_t i = 0; i < s.extent; ++i) {
      for (std::size_t l = 0; l < s.before; ++l) {
        perm[l + s.before * (i + s.extent * r)] = i + s.extent * (l + s.before * r);
      }
    }
  }
  return perm;
}

Mat<double> mode_commutation(std::span<const std::size_t> dims, std::size_t n) {
  return dense_from_permutation(mode_commutation_permutation(dims, n));
}

#define CPFIT_INSTANTIATE(S)                                                                     \
  template class Tensor<S>;                                                                      \
  template Mat<S> unfold<S>(const Tensor<S>&, std::size_t);                                      \
  template Tensor<S> fold<S>(const Mat<S>&, const std::vector<std::size_t>&, std::size_t);       \
  template Mat<S> kronecker<S>(const Mat<S>&, const Mat<S>&);                                    \
  template Mat<S> khatri_rao<S>(const Mat<S>&, const Mat<S>&);                                   \
  template Mat<S> khatri_rao_excl<S>(const Factors<S>&, std::size_t);                      \
  template Mat<S> hadamard<S>(const Mat<S>&, const Mat<S>&);                                     \
  template Mat<S> elementwise_div<S>(const Mat<S>&, const Mat<S>&);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
