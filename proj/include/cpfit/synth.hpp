#pragma once

// Collinear benchmark tensors, calibrated Gaussian noise, the eigenvalue
// analysis of collinear unfoldings, and MedSAE scoring.
//
// Collinear factors: a_1^(n) = u_1^(n), a_r^(n) = u_1^(n) + nu u_r^(n) (r >= 2),
// with U^(n) orthonormal (thin QR of a seeded Gaussian matrix).

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cpfit/kruskal.hpp"
#include "cpfit/tensor.hpp"

namespace cpfit {

struct CollinearSpec {
  std::vector<std::size_t> dims;
  std::size_t rank = 2;
  double nu = 0.5;
  /// Empty or +inf means noise-free.
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
};

template <Scalar S>
struct CollinearProblem {
  KruskalModel<S> truth;
  /// Noise-free reconstruction of truth.
  Tensor<S> tensor;
  /// tensor plus noise when spec.snr_db is finite.
  std::optional<Tensor<S>> noisy;
};

/// Throws DimensionError when nu <= 0, R < 1 or R > min I_n.
template <Scalar S>
CollinearProblem<S> gen_collinear(const CollinearSpec& spec);

/// prod_n ||a_r^(n)|| times |lambda_r| for every component.
template <Scalar S>
std::vector<double> component_magnitudes(const KruskalModel<S>& model);

struct CollinearAngles {
  double theta_1r = 0.0;  // degrees, between a_1 and a_r
  double theta_qr = 0.0;  // degrees, between a_q and a_r (q, r >= 2)
};

/// theta_1r = atan(nu), theta_qr = atan(nu sqrt(nu^2 + 2)).
CollinearAngles collinearity_angles(double nu);

/// Angle in degrees between two vectors, using |<u, v>|.
template <Scalar S>
double vector_angle_deg(const Vec<S>& u, const Vec<S>& v);

/// sigma with sigma^2 = ||Y||^2 / (10^(snr/10) prod I_n).
double noise_sigma(double norm2, std::size_t volume, double snr_db);

/// y + sigma * N with N i.i.d. standard (circular for complex) normal drawn
/// from the noise stream of seed. snr_db = +inf returns y unchanged.
template <Scalar S>
Tensor<S> add_noise(const Tensor<S>& y, double snr_db, std::uint64_t seed);

/// 10 log10(||clean||^2 / ||noisy - clean||^2).
template <Scalar S>
double measured_snr_db(const Tensor<S>& clean, const Tensor<S>& noisy);

struct SpectrumReport {
  double x = 0.0;
  double y = 0.0;
  double lam_max = 0.0;
  double lam_mid = 0.0;
  double lam_min = 0.0;
  double sigma2 = 0.0;
  double noise_floor = 0.0;
  double norm2 = 0.0;
  bool feasible = true;
};

/// Closed-form spectrum of the collinear Gram Sigma = Q (Q^T Q)^{.(N-1)} Q^T for
/// I x ... x I tensors. The norm is R^2 + (R-1)(xy - 1). Throws DimensionError
/// when R < 2, I < R, N < 2 or nu <= 0. snr_db = +inf gives a zero floor.
SpectrumReport spectrum(std::size_t size, std::size_t rank, std::size_t order, double nu, double snr_db);

/// Explicit R x R matrix Q with columns e_1 and e_1 + nu e_r.
Mat<double> collinear_q(std::size_t rank, double nu);

/// Minimum-cost assignment on a square cost matrix; result[row] = column.
std::vector<std::size_t> hungarian(const Mat<double>& cost);

inline constexpr double kMedsaeFloorDb = -300.0;

/// Per-run angular errors after matching estimate components to truth.
struct ComponentAngles {
  /// alpha[n][r] in radians between truth a_r^(n) and its matched estimate.
  std::vector<std::vector<double>> alpha;
  /// match[r] = estimate component assigned to truth component r.
  std::vector<std::size_t> match;
};

/// Matches components by Hungarian assignment on prod_n |cos| and measures
/// each angle with |inner product|, so column permutation, scaling and
/// sign/phase of the estimate do not matter. Throws DimensionError on a rank
/// or shape mismatch.
template <Scalar S>
ComponentAngles component_angles(const KruskalModel<S>& truth, const KruskalModel<S>& estimate);

struct MedsaeReport {
  /// Mean over modes of MedSAE for component 1 (dB).
  double first_db = 0.0;
  /// Mean over modes and components r >= 2 (dB); NaN when R == 1.
  double rest_db = std::numeric_limits<double>::quiet_NaN();
  /// per_component[n][r] = 10 log10(median over runs of alpha^2), floored.
  std::vector<std::vector<double>> per_component;
};

MedsaeReport medsae(const std::vector<ComponentAngles>& runs);

template <Scalar S>
MedsaeReport medsae(const KruskalModel<S>& truth, const KruskalModel<S>& estimate) {
  return medsae(std::vector<ComponentAngles>{component_angles(truth, estimate)});
}

}  // namespace cpfit
