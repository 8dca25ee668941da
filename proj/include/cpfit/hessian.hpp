#pragma once

// Explicit Jacobian / approximate Hessian (dense oracle) and the structured
// pieces behind the fast damped inverse:
//
//   H = J^H J = G + Z K Z^H
//   G = blkdiag(Gamma^(n) (x) I_{I_n}),  Z = blkdiag(I_R (x) A^(n)),
//   K^(n,m) = P_R diag(vec Gamma^(n,m)) for n != m,  K^(n,n) = 0.
//
// With damping, Gt_n = (Gamma^(n) + mu I)^{-1} and Psi_n = Gt_n (x) C^(n):
//
//   (H + mu I)^{-1} = blkdiag(Gt_n (x) I) - L B L^H,  L = blkdiag(Gt_n (x) A^(n)),
//   B = (K^{-1} + Psi)^{-1} = K (I + Psi K)^{-1}.
//
// Factor vectors are ordered vec(A^(1)), ..., vec(A^(N)) with vec(A)[i + I r].

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cpfit/kruskal.hpp"
#include "cpfit/tensor.hpp"

namespace cpfit {

/// Largest problem the dense oracle accepts: J * RT entries and RT.
inline constexpr std::size_t kOracleMaxEntries = 10'000'000;
inline constexpr std::size_t kOracleMaxUnknowns = 3000;

/// Throws SizeGuardError when a J x RT Jacobian (or RT x RT Hessian when
/// volume == 0) exceeds the oracle limits.
void check_oracle_size(std::size_t volume, std::size_t unknowns);

/// Which small system produces B: I + Psi K (fLM_a), K^{-1} + Psi (fLM_b), or
/// fLM_b whenever K passes the invertibility test and fLM_a otherwise.
enum class Variant { flm_a, flm_b, automatic };

/// J x RT Jacobian of vec(Yhat) with respect to the stacked factors.
/// Block n is Q_n ((KR_{k != n} A^(k)) (x) I_{I_n}).
template <Scalar S>
Mat<S> jacobian(const Factors<S>& factors);

/// Block (n, m) of H, size R I_n x R I_m. Sub-block (r, s) equals
/// delta_{nm} Gamma^(n)_{rs} I + (1 - delta_{nm}) Gamma^(n,m)_{rs} a_s^(n) a_r^(m)^H.
template <Scalar S>
Mat<S> hessian_block(const GramCache<S>& cache, const Factors<S>& factors, std::size_t n, std::size_t m);

template <Scalar S>
Mat<S> assemble_hessian(const Factors<S>& factors);

template <Scalar S>
struct HessianParts {
  Mat<S> G;
  Mat<S> Z;
  Mat<S> K;
};

template <Scalar S>
HessianParts<S> build_parts(const GramCache<S>& cache, const Factors<S>& factors);

/// Dense NR^2 x NR^2 kernel K.
template <Scalar S>
Mat<S> kernel_matrix(const GramCache<S>& cache);

/// True when N >= 2 and every entry of every Gamma^(n,m) (n != m) and of Gamma
/// is at least 1e-10 times the largest such entry in magnitude.
template <Scalar S>
bool kernel_invertible(const GramCache<S>& cache);

/// Closed-form K^{-1}: blocks (1/(N-1) - delta_{nm}) diag(vec(C^(n) (*) C^(m) (/) Gamma)) P_R.
/// Throws SingularKernelError when kernel_invertible fails.
template <Scalar S>
Mat<S> kernel_inverse(const GramCache<S>& cache);

/// Dense dGN step: solves (J^H J + mu I) d = J^H vec(Y - Yhat) by LU.
template <Scalar S>
Vec<S> dense_damped_solve(const Tensor<S>& y, const Factors<S>& factors, double mu);

/// (Gamma^(n) + mu I)^{-1} for every mode.
template <Scalar S>
std::vector<Mat<S>> gamma_tilde(const GramCache<S>& cache, double mu);

/// Psi_n = Gt_n (x) C^(n).
template <Scalar S>
std::vector<Mat<S>> psi_blocks(const GramCache<S>& cache, const std::vector<Mat<S>>& gt);

/// Phi_1 = I + Psi K. Zero blocks are skipped during assembly.
template <Scalar S>
Mat<S> assemble_phi1(const GramCache<S>& cache, const std::vector<Mat<S>>& psi);

/// Phi_2 = K^{-1} + Psi. Throws SingularKernelError like kernel_inverse.
template <Scalar S>
Mat<S> assemble_phi2(const GramCache<S>& cache, const std::vector<Mat<S>>& psi);

/// Resolves Variant::automatic against the kernel test. Requesting flm_b on a
/// singular kernel throws SingularKernelError.
template <Scalar S>
Variant resolve_variant(const GramCache<S>& cache, Variant requested);

/// Dense B for the chosen (resolved) variant. Throws NumericalError when the
/// small system is numerically singular.
template <Scalar S>
Mat<S> damped_core(const GramCache<S>& cache, const std::vector<Mat<S>>& psi, Variant variant);

/// Memory-saving form of (H + mu I)^{-1}: Gt_n and
/// S^(n,m) = (Gt_n (x) I_R) B^(n,m) (Gt_m (x) I_R).
template <Scalar S>
struct StructuredInverse {
  std::vector<Mat<S>> gamma_tilde;
  std::vector<Mat<S>> s_blocks;  // row-major N x N, each R^2 x R^2
  double mu = 0.0;

  [[nodiscard]] std::size_t order() const { return gamma_tilde.size(); }
  [[nodiscard]] const Mat<S>& block(std::size_t n, std::size_t m) const { return s_blocks[n * order() + m]; }
  /// Stored scalars, N R^2 + N^2 R^4.
  [[nodiscard]] std::size_t storage_size() const;
};

template <Scalar S>
StructuredInverse<S> fast_damped_inverse(const GramCache<S>& cache, double mu, Variant variant = Variant::automatic);

/// Dense RT x RT matrix represented by inv for the given factors. Block (n, m)
/// is delta_{nm} Gt_n (x) I - (I_R (x) A^(n)) S^(n,m) (I_R (x) A^(m)^H).
template <Scalar S>
Mat<S> materialize_inverse(const StructuredInverse<S>& inv, const Factors<S>& factors);

struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  friend bool operator==(const Rational&, const Rational&) = default;
  [[nodiscard]] double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Fraction of structural nonzeros: ((N-1)R^2 + 1)/(N R^2) for Phi_1 and
/// (R^2 + N - 1)/(N R^2) for Phi_2, reduced. Requires N >= 2, R >= 1.
Rational phi_density(std::size_t order, std::size_t rank, Variant variant);

}  // namespace cpfit
