#pragma once

// Kruskal (CP) models and the kernels shared by ALS, dGN and fLM:
// Gram caches, MTTKRP, the gradient J^H vec(Y - Yhat), relative error,
// normalization, initialization and the ALS / ALS-with-line-search sweeps.
//
// Solver-facing routines take bare factor lists; any component weights are
// folded into the last factor first (see absorb_weights).

#include <cstddef>
#include <optional>
#include <vector>

#include "cpfit/random.hpp"
#include "cpfit/tensor.hpp"

namespace cpfit {

template <Scalar S>
struct KruskalModel {
  Factors<S> factors;
  /// Per-component weights lambda_r; empty means all ones.
  Vec<S> weights;

  [[nodiscard]] std::size_t order() const { return factors.size(); }
  [[nodiscard]] std::size_t rank() const {
    return factors.empty() ? 0 : static_cast<std::size_t>(factors.front().cols());
  }
  [[nodiscard]] std::vector<std::size_t> dims() const;
  /// Weights with the all-ones default made explicit.
  [[nodiscard]] Vec<S> effective_weights() const;
  /// Throws DimensionError unless every factor shares R >= 1 columns and the
  /// weight vector (if any) has length R.
  void validate() const;
};

/// Factors with lambda_r multiplied into column r of the last factor.
template <Scalar S>
Factors<S> absorb_weights(const KruskalModel<S>& model);

/// R x R Gram matrices of one factor set. C^(n) = A^(n)^H A^(n);
/// Gamma^(n,m) is the Hadamard product of all C^(k) with k != n, m, and
/// Gamma^(n,n) = Gamma^(n); gamma_full = Gamma = C^(n) (*) Gamma^(n).
template <Scalar S>
struct GramCache {
  std::vector<Mat<S>> C;
  std::vector<Mat<S>> gamma_excl;
  std::vector<Mat<S>> gamma_pair;  // row-major N x N
  Mat<S> gamma_full;

  [[nodiscard]] std::size_t order() const { return C.size(); }
  [[nodiscard]] std::size_t rank() const { return C.empty() ? 0 : static_cast<std::size_t>(C.front().rows()); }
  [[nodiscard]] const Mat<S>& pair(std::size_t n, std::size_t m) const { return gamma_pair[n * order() + m]; }
};

template <Scalar S>
GramCache<S> build_gram_cache(const Factors<S>& factors);

template <Scalar S>
Tensor<S> reconstruct(const KruskalModel<S>& model);

template <Scalar S>
Tensor<S> reconstruct(const Factors<S>& factors) {
  return reconstruct(KruskalModel<S>{factors, {}});
}

/// Y_(n) (KR_{k != n} A^(k))^*; the conjugate is a no-op for real data.
template <Scalar S>
Mat<S> mttkrp(const Tensor<S>& y, const Factors<S>& factors, std::size_t n);

/// Gradient blocks vec(mttkrp(y, A, n) - A^(n) Gamma^(n)^T), concatenated over
/// n. Length R * sum(I_n). Equals J^T vec(E) (real) and J^H vec(E) (complex).
template <Scalar S>
Vec<S> gradient(const Tensor<S>& y, const Factors<S>& factors);

/// ||Y - Yhat||_F / ||Y||_F. Throws DimensionError when ||Y|| == 0.
template <Scalar S>
double relative_error(const Tensor<S>& y, const KruskalModel<S>& model);

template <Scalar S>
double relative_error(const Tensor<S>& y, const Factors<S>& factors) {
  return relative_error(y, KruskalModel<S>{factors, {}});
}

/// Stacks vec(A^(1)), ..., vec(A^(N)).
template <Scalar S>
Vec<S> vectorize_factors(const Factors<S>& factors);

/// Inverse of vectorize_factors for the given shapes.
template <Scalar S>
Factors<S> unvectorize_factors(const Vec<S>& flat, const std::vector<std::size_t>& dims, std::size_t rank);

/// Each component's total magnitude |lambda_r| prod_n ||a_r^(n)|| spread so
/// that every mode norm equals its N-th root; weights become ones. The
/// largest-magnitude entry of a_r^(n) is made real-positive for n < N and the
/// residual sign/phase is carried by the last mode. Reconstruction is
/// unchanged. Throws DimensionError on a zero component.
template <Scalar S>
KruskalModel<S> normalize_equal_energy(const KruskalModel<S>& model);

/// Unit-norm columns in every mode with the same sign/phase convention as
/// normalize_equal_energy (applied to all modes); magnitude and residual
/// phase go to the weights.
template <Scalar S>
KruskalModel<S> normalize_unit(const KruskalModel<S>& model);

/// Unit-norm columns in modes 1..N-1; magnitude moved into the last factor.
template <Scalar S>
Factors<S> normalize_last_mode(const KruskalModel<S>& model);

/// R leading left singular vectors of each unfolding. Modes with I_n < R are
/// padded with seeded random unit columns.
template <Scalar S>
Factors<S> svd_init(const Tensor<S>& y, std::size_t rank, Rng& rng);

/// I.i.d. standard normal factors.
template <Scalar S>
Factors<S> random_init(const std::vector<std::size_t>& dims, std::size_t rank, Rng& rng);

/// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix through its
/// eigendecomposition. Eigenvalues below eps * R * lambda_max are dropped.
template <Scalar S>
Mat<S> hermitian_pinv(const Mat<S>& m);

/// One ALS sweep in ascending mode order; each update sees the factors
/// already refreshed earlier in the sweep.
template <Scalar S>
Factors<S> als_step(const Tensor<S>& y, const Factors<S>& factors);

/// Line-search state for ALS-ls: the iterate from the previous call.
template <Scalar S>
struct LineSearchHistory {
  std::optional<Factors<S>> previous;
  std::size_t iteration = 0;
};

/// ALS sweep followed by extrapolation A_prev + s (A_als - A_prev) for
/// s in {1.1, t^(1/3)}, where A_prev is the previous iterate held in the
/// history and t the iteration count. The candidate with the lowest relative
/// error wins; the plain ALS result is kept when no extrapolation beats it.
/// On the first call (empty history) this is exactly als_step.
template <Scalar S>
Factors<S> als_line_search_step(const Tensor<S>& y, const Factors<S>& factors, LineSearchHistory<S>& history);

}  // namespace cpfit
