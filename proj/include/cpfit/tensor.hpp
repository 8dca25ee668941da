#pragma once

// Dense column-major tensors and the product kernels used by every CP routine.
//
// Storage convention: entry (i_1, ..., i_N) lives at
//   i_1 + I_1 * (i_2 + I_2 * (i_3 + ...)),
// i.e. the first index varies fastest, so vec(Y) == vec(Y_(1)).
// Modes are 0-based throughout the C++ API.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace cpfit {

using cplx = std::complex<double>;

template <class S>
concept Scalar = std::same_as<S, double> || std::same_as<S, cplx>;

template <Scalar S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <Scalar S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// N factor matrices A^(n), each I_n x R.
template <Scalar S>
using Factors = std::vector<Mat<S>>;

enum class ScalarKind : std::uint8_t { real = 0, complex = 1 };

template <Scalar S>
inline constexpr ScalarKind scalar_kind_v =
    std::is_same_v<S, double> ? ScalarKind::real : ScalarKind::complex;

template <Scalar S>
class Tensor {
 public:
  Tensor() = default;
  /// Zero tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, Vec<S> data);

  [[nodiscard]] const std::vector<std::size_t>& dims() const { return dims_; }
  [[nodiscard]] std::size_t dim(std::size_t n) const { return dims_.at(n); }
  [[nodiscard]] std::size_t order() const { return dims_.size(); }
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  [[nodiscard]] static constexpr ScalarKind kind() { return scalar_kind_v<S>; }

  [[nodiscard]] const Vec<S>& data() const { return data_; }
  [[nodiscard]] Vec<S>& data() { return data_; }

  [[nodiscard]] std::size_t linear_index(std::span<const std::size_t> idx) const;
  [[nodiscard]] S& operator()(std::span<const std::size_t> idx) { return data_[linear_index(idx)]; }
  [[nodiscard]] const S& operator()(std::span<const std::size_t> idx) const {
    return data_[linear_index(idx)];
  }

  [[nodiscard]] double norm() const { return data_.norm(); }

 private:
  std::vector<std::size_t> dims_;
  Vec<S> data_;
};

using RealTensor = Tensor<double>;
using ComplexTensor = Tensor<cplx>;

/// Product of dims (J). Throws DimensionError on an empty or zero dimension.
std::size_t checked_volume(std::span<const std::size_t> dims);

/// Mode-n unfolding Y_(n) of size I_n x (J / I_n). Columns enumerate the
/// remaining modes in ascending order with the lowest mode varying fastest.
template <Scalar S>
Mat<S> unfold(const Tensor<S>& t, std::size_t n);

/// Inverse of unfold for a tensor of the given dims.
template <Scalar S>
Tensor<S> fold(const Mat<S>& m, const std::vector<std::size_t>& dims, std::size_t n);

template <Scalar S>
Vec<S> vectorize(const Tensor<S>& t) {
  return t.data();
}

template <Scalar S>
Mat<S> kronecker(const Mat<S>& a, const Mat<S>& b);

/// Column-wise Kronecker product; column r is kron(a_r, b_r).
template <Scalar S>
Mat<S> khatri_rao(const Mat<S>& a, const Mat<S>& b);

/// A^(N) (.) ... (.) A^(n+1) (.) A^(n-1) (.) ... (.) A^(1). With a single
/// factor (N == 1) the empty product is a 1 x R row of ones.
template <Scalar S>
Mat<S> khatri_rao_excl(const Factors<S>& factors, std::size_t n);

template <Scalar S>
Mat<S> hadamard(const Mat<S>& a, const Mat<S>& b);

/// Elementwise quotient; throws DimensionError on a zero divisor entry.
template <Scalar S>
Mat<S> elementwise_div(const Mat<S>& a, const Mat<S>& b);

/// Permutation of P_{I,J}: row k of P has its single one in column perm[k].
/// P_{I,J} vec(X^T) == vec(X) for every I x J matrix X.
std::vector<std::size_t> commutation_permutation(std::size_t rows, std::size_t cols);

/// Dense P_{I,J}. Test scaffolding only; solvers use the permutation form.
Mat<double> commutation(std::size_t rows, std::size_t cols);

/// Permutation form of Q_n with Q_n vec(Y_(n)) == vec(Y).
std::vector<std::size_t> mode_commutation_permutation(std::span<const std::size_t> dims,
                                                      std::size_t n);

/// Dense Q_n (J x J).
Mat<double> mode_commutation(std::span<const std::size_t> dims, std::size_t n);

/// x -> P x, with P given in permutation form.
template <Scalar S>
Vec<S> apply_permutation(std::span<const std::size_t> perm, const Vec<S>& x) {
  Vec<S> out(x.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = x[static_cast<Eigen::Index>(perm[k])];
  }
  return out;
}

/// Frobenius norm of a - b relative to the norm of b (absolute when b is zero).
template <class A, class B>
double relative_difference(const A& a, const B& b) {
  const double denom = b.norm();
  const double diff = (a - b).norm();
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace cpfit
