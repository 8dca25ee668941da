#pragma once

// Fast damped Gauss-Newton (fLM) iteration and the shared fit driver.
//
// One fLM step at damping mu, with Gt_n = (Gamma^(n) + mu I)^{-1}:
//   A_mu^(n) = Y_(n) KR_{k != n}^* Gt_n^T                  damped ALS factor
//   w_n      = vec(A^(n)^H A_mu^(n) - C^(n) Gamma^(n)^T Gt_n^T)
//   vec(F)   = B w,  B from I + Psi K (fLM_a) or K^{-1} + Psi (fLM_b)
//   A^(n)   <- A_mu^(n) + A^(n) (I - (F_n + Gamma^(n)^T) Gt_n^T)
// For real data every transpose above is a no-op.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cpfit/hessian.hpp"
#include "cpfit/kruskal.hpp"

namespace cpfit {

/// Y_(n) KR^* (Gamma^(n)^T + mu I)^{-1}. With mu == 0 this is the ALS update
/// whenever Gamma^(n) is nonsingular.
template <Scalar S>
Mat<S> damped_als_factor(const Tensor<S>& y, const Factors<S>& factors, const GramCache<S>& cache, std::size_t n,
                         double mu);

/// Stacked w blocks, length N R^2.
template <Scalar S>
Vec<S> compute_w(const Factors<S>& factors, const GramCache<S>& cache, const Factors<S>& damped, double mu);

template <Scalar S>
struct FlmWork {
  Factors<S> damped_factors;
  std::vector<Mat<S>> gamma_tilde;
  std::vector<Mat<S>> psi;
  Vec<S> w;
  std::vector<Mat<S>> F;
  Variant used = Variant::flm_a;
};

/// Damped factors, Gt, Psi and w for one step (F left empty).
template <Scalar S>
FlmWork<S> prepare_work(const Tensor<S>& y, const Factors<S>& factors, const GramCache<S>& cache, double mu);

/// R x R slices F_n with vec(F) = B w. flm_b throws SingularKernelError when K
/// fails the invertibility test; a numerically singular small system throws
/// NumericalError. The resolved variant is written to *used when given.
template <Scalar S>
std::vector<Mat<S>> solve_B(const GramCache<S>& cache, const std::vector<Mat<S>>& psi, const Vec<S>& w,
                            Variant variant, Variant* used = nullptr);

template <Scalar S>
Factors<S> flm_update(const Factors<S>& factors, const Factors<S>& damped, const std::vector<Mat<S>>& F,
                      const GramCache<S>& cache, double mu);

/// Candidate factors of one full fLM step.
template <Scalar S>
Factors<S> flm_step(const Tensor<S>& y, const Factors<S>& factors, double mu, Variant variant);

/// tau * max(1, max diag C^(N)); expects unit-norm columns in modes 1..N-1.
template <Scalar S>
double mu_init(const GramCache<S>& cache, double tau);

struct LmState {
  double mu = 1.0;
  double growth = 2.0;
  std::vector<double> err_history;
  std::size_t iter = 0;
  bool accepted = false;
};

/// Nielsen damping: rho > 0 accepts (mu *= max(1/3, 1 - (2 rho - 1)^3), growth = 2);
/// otherwise mu *= growth and growth doubles.
LmState nielsen_update(LmState state, double rho);

enum class Algo { als, als_ls, dgn_oracle, flm_a, flm_b, automatic };
enum class Init { svd, random };
enum class StopReason { tol, max_iters, mu_overflow, error };

std::string to_string(Algo algo);
std::string to_string(StopReason reason);
/// Accepts the CLI spellings als, als-ls, dgn-oracle, flm-a, flm-b, auto.
Algo parse_algo(const std::string& name);
Init parse_init(const std::string& name);

inline constexpr double kMuOverflow = 1e30;
inline constexpr std::size_t kStallWindow = 10;

struct FitConfig {
  Algo algo = Algo::automatic;
  std::size_t rank = 1;
  double tau = 1e-3;
  double tol = 1e-8;
  std::size_t max_iters = 1000;
  std::uint64_t seed = 0;
  Init init = Init::svd;
};

/// relerr[0] is the initial error and relerr[t] the error of the current
/// iterate after iteration t; mu and accepted have one entry per iteration.
struct FitTrace {
  std::vector<double> relerr;
  std::vector<double> mu;
  std::vector<bool> accepted;
  StopReason stop = StopReason::max_iters;
  std::size_t iters = 0;
  std::size_t accepted_iters = 0;
  /// fLM_b iterations that had to use fLM_a because K was singular.
  std::size_t fallbacks = 0;
  std::string error_message;
};

template <Scalar S>
struct FitResult {
  KruskalModel<S> model;
  FitTrace trace;
};

/// Initial factors for cfg (SVD or random, seeded from cfg.seed).
template <Scalar S>
Factors<S> initial_factors(const Tensor<S>& y, const FitConfig& cfg);

/// Runs cfg.algo from initial_factors. Stops when the last kStallWindow
/// successive error differences are all below tol, at max_iters, or when mu
/// exceeds kMuOverflow. A failure inside the loop ends the run with
/// StopReason::error, a message naming the iteration, and the last accepted
/// model. Invalid configurations and the oracle size guard throw up front.
template <Scalar S>
FitResult<S> fit(const Tensor<S>& y, const FitConfig& cfg);

template <Scalar S>
FitResult<S> fit(const Tensor<S>& y, const FitConfig& cfg, Factors<S> init);

}  // namespace cpfit
