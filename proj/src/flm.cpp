#include "cpfit/flm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cpfit/errors.hpp"

namespace cpfit {

namespace {

template <Scalar S>
Mat<S> shifted_inverse(const Mat<S>& m, double mu) {
  Mat<S> shifted = m;
  shifted.diagonal().array() += S(mu);
  Eigen::PartialPivLU<Mat<S>> lu(shifted);
  Mat<S> inv = lu.inverse();
  if (!inv.allFinite()) throw NumericalError("Gamma^(n) + mu I is singular");
  return inv;
}

template <Scalar S>
double real_part(S v) {
  return std::real(v);
}

}  // namespace

template <Scalar S>
Mat<S> damped_als_factor(const Tensor<S>& y, const Factors<S>& factors, const GramCache<S>& cache, std::size_t n,
                         double mu) {
  if (n >= factors.size()) throw DimensionError("damped_als_factor: mode out of range");
  return mttkrp(y, factors, n) * shifted_inverse<S>(cache.gamma_excl[n].transpose(), mu);
}

template <Scalar S>
Vec<S> compute_w(const Factors<S>& factors, const GramCache<S>& cache, const Factors<S>& damped, double mu) {
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Eigen::Index r2 = rank * rank;
  Vec<S> w(static_cast<Eigen::Index>(factors.size()) * r2);
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const Mat<S> gt_t = shifted_inverse<S>(cache.gamma_excl[n].transpose(), mu);
    const Mat<S> block =
        factors[n].adjoint() * damped[n] - cache.C[n] * cache.gamma_excl[n].transpose() * gt_t;
    w.segment(static_cast<Eigen::Index>(n) * r2, r2) = Eigen::Map<const Vec<S>>(block.data(), r2);
  }
  return w;
}

template <Scalar S>
FlmWork<S> prepare_work(const Tensor<S>& y, const Factors<S>& factors, const GramCache<S>& cache, double mu) {
  FlmWork<S> work;
  work.gamma_tilde = gamma_tilde(cache, mu);
  work.psi = psi_blocks(cache, work.gamma_tilde);
  work.damped_factors.reserve(factors.size());
  for (std::size_t n = 0; n < factors.size(); ++n) {
    work.damped_factors.push_back(mttkrp(y, factors, n) * work.gamma_tilde[n].transpose());
  }
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Eigen::Index r2 = rank * rank;
  work.w.resize(static_cast<Eigen::Index>(factors.size()) * r2);
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const Mat<S> block = factors[n].adjoint() * work.damped_factors[n] -
                         cache.C[n] * cache.gamma_excl[n].transpose() * work.gamma_tilde[n].transpose();
    work.w.segment(static_cast<Eigen::Index>(n) * r2, r2) = Eigen::Map<const Vec<S>>(block.data(), r2);
  }
  return work;
}

template <Scalar S>
std::vector<Mat<S>> solve_B(const GramCache<S>& cache, const std::vector<Mat<S>>& psi, const Vec<S>& w,
                            Variant variant, Variant* used) {
  const std::size_t order = cache.order();
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Eigen::Index r2 = rank * rank;
  if (w.size() != static_cast<Eigen::Index>(order) * r2) throw DimensionError("solve_B: w has the wrong length");
  if (psi.size() != order) throw DimensionError("solve_B: psi has the wrong block count");
  const Variant v = resolve_variant(cache, variant);
  if (used) *used = v;

  Vec<S> bw;
  if (v == Variant::flm_b) {
    const Mat<S> phi = assemble_phi2(cache, psi);
    Eigen::PartialPivLU<Mat<S>> lu(phi);
    if (!(lu.rcond() > std::numeric_limits<double>::epsilon())) {
      throw NumericalError("K^{-1} + Psi is numerically singular");
    }
    bw = lu.solve(w);
  } else {
    const Mat<S> phi = assemble_phi1(cache, psi);
    Eigen::PartialPivLU<Mat<S>> lu(phi);
    if (!(lu.rcond() > std::numeric_limits<double>::epsilon())) {
      throw NumericalError("I + Psi K is numerically singular");
    }
    const Vec<S> x = lu.solve(w);
    // K x blockwise: (K x)_n = sum_{m != n} P_R diag(vec Gamma^(n,m)) x_m
    const auto perm = commutation_permutation(cache.rank(), cache.rank());
    bw = Vec<S>::Zero(w.size());
    for (std::size_t n = 0; n < order; ++n) {
      for (std::size_t m = 0; m < order; ++m) {
        if (n == m) continue;
        const Mat<S>& g = cache.pair(n, m);
        for (Eigen::Index p = 0; p < r2; ++p) {
          const auto q = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(p)]);
          bw[static_cast<Eigen::Index>(n) * r2 + p] += g.data()[q] * x[static_cast<Eigen::Index>(m) * r2 + q];
        }
      }
    }
  }
  if (!bw.allFinite()) throw NumericalError("solve_B produced non-finite values");

  std::vector<Mat<S>> F;
  F.reserve(order);
  for (std::size_t n = 0; n < order; ++n) {
    F.push_back(Eigen::Map<const Mat<S>>(bw.data() + static_cast<Eigen::Index>(n) * r2, rank, rank));
  }
  return F;
}

template <Scalar S>
Factors<S> flm_update(const Factors<S>& factors, const Factors<S>& damped, const std::vector<Mat<S>>& F,
                      const GramCache<S>& cache, double mu) {
  if (damped.size() != factors.size() || F.size() != factors.size()) {
    throw DimensionError("flm_update: inconsistent block counts");
  }
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Mat<S> eye = Mat<S>::Identity(rank, rank);
  Factors<S> out;
  out.reserve(factors.size());
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const Mat<S> gt_t = shifted_inverse<S>(cache.gamma_excl[n].transpose(), mu);
    out.push_back(damped[n] + factors[n] * (eye - (F[n] + cache.gamma_excl[n].transpose()) * gt_t));
  }
  return out;
}

template <Scalar S>
Factors<S> flm_step(const Tensor<S>& y, const Factors<S>& factors, double mu, Variant variant) {
  if (!(mu > 0.0)) throw DimensionError("flm_step: mu must be positive");
  const GramCache<S> cache = build_gram_cache(factors);
  FlmWork<S> work = prepare_work(y, factors, cache, mu);
  work.F = solve_B(cache, work.psi, work.w, variant, &work.used);
  return flm_update(factors, work.damped_factors, work.F, cache, mu);
}

template <Scalar S>
double mu_init(const GramCache<S>& cache, double tau) {
  if (cache.order() == 0) throw DimensionError("mu_init: empty cache");
  const double peak = cache.C.back().diagonal().real().maxCoeff();
  return tau * std::max(1.0, peak);
}

LmState nielsen_update(LmState state, double rho) {
  if (rho > 0.0) {
    const double t = 2.0 * rho - 1.0;
    state.mu *= std::max(1.0 / 3.0, 1.0 - t * t * t);
    state.growth = 2.0;
    state.accepted = true;
  } else {
    state.mu *= state.growth;
    state.growth *= 2.0;
    state.accepted = false;
  }
  ++state.iter;
  return state;
}

std::string to_string(Algo algo) {
  switch (algo) {
    case Algo::als:
      return "als";
    case Algo::als_ls:
      return "als-ls";
    case Algo::dgn_oracle:
      return "dgn-oracle";
    case Algo::flm_a:
      return "flm-a";
    case Algo::flm_b:
      return "flm-b";
    case Algo::automatic:
      return "auto";
  }
  return "unknown";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::tol:
      return "tol";
    case StopReason::max_iters:
      return "max_iters";
    case StopReason::mu_overflow:
      return "mu_overflow";
    case StopReason::error:
      return "error";
  }
  return "unknown";
}

Algo parse_algo(const std::string& name) {
  for (Algo a : {Algo::als, Algo::als_ls, Algo::dgn_oracle, Algo::flm_a, Algo::flm_b, Algo::automatic}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown algorithm '" + name + "' (expected als, als-ls, dgn-oracle, flm-a, flm-b, auto)");
}

Init parse_init(const std::string& name) {
  if (name == "svd") return Init::svd;
  if (name == "random") return Init::random;
  throw std::invalid_argument("unknown init '" + name + "' (expected svd or random)");
}

template <Scalar S>
Factors<S> initial_factors(const Tensor<S>& y, const FitConfig& cfg) {
  if (cfg.rank < 1) throw DimensionError("rank must be at least 1");
  if (cfg.init == Init::svd) {
    Rng rng(cfg.seed, Stream::svd_padding);
    return svd_init(y, cfg.rank, rng);
  }
  Rng rng(cfg.seed, Stream::init);
  return random_init<S>(y.dims(), cfg.rank, rng);
}

template <Scalar S>
FitResult<S> fit(const Tensor<S>& y, const FitConfig& cfg) {
  if (cfg.algo == Algo::dgn_oracle) {
    std::size_t dim_sum = 0;
    for (auto d : y.dims()) dim_sum += d;
    check_oracle_size(y.size(), dim_sum * cfg.rank);
  }
  return fit(y, cfg, initial_factors(y, cfg));
}

namespace {

bool is_lm(Algo algo) {
  return algo == Algo::dgn_oracle || algo == Algo::flm_a || algo == Algo::flm_b || algo == Algo::automatic;
}

Variant variant_of(Algo algo) {
  switch (algo) {
    case Algo::flm_a:
      return Variant::flm_a;
    case Algo::flm_b:
      return Variant::flm_b;
    default:
      return Variant::automatic;
  }
}

template <Scalar S>
Factors<S> try_equal_energy(const Factors<S>& factors) {
  try {
    return normalize_equal_energy(KruskalModel<S>{factors, {}}).factors;
  } catch (const DimensionError&) {
    return factors;
  }
}

}  // namespace

template <Scalar S>
FitResult<S> fit(const Tensor<S>& y, const FitConfig& cfg, Factors<S> factors) {
  if (cfg.rank < 1) throw DimensionError("rank must be at least 1");
  if (!(cfg.tau > 0.0)) throw DimensionError("tau must be positive");
  if (!(cfg.tol >= 0.0)) throw DimensionError("tol must be non-negative");
  KruskalModel<S>{factors, {}}.validate();
  if (factors.size() != y.order()) throw DimensionError("initial factors do not match the tensor order");
  for (std::size_t n = 0; n < factors.size(); ++n) {
    if (static_cast<std::size_t>(factors[n].rows()) != y.dim(n)) {
      throw DimensionError("initial factor " + std::to_string(n) + " does not match the tensor dims");
    }
  }
  if (static_cast<std::size_t>(factors.front().cols()) != cfg.rank) {
    throw DimensionError("initial factors do not have the configured rank");
  }
  if (cfg.algo == Algo::dgn_oracle) {
    std::size_t unknowns = 0;
    for (const auto& a : factors) unknowns += static_cast<std::size_t>(a.size());
    check_oracle_size(y.size(), unknowns);
  }

  FitResult<S> result;
  FitTrace& trace = result.trace;
  const bool lm = is_lm(cfg.algo);
  const double ynorm2 = y.data().squaredNorm();

  LmState state;
  if (lm) {
    factors = normalize_last_mode(KruskalModel<S>{factors, {}});
    state.mu = mu_init(build_gram_cache(factors), cfg.tau);
  } else {
    state.mu = 0.0;
  }
  double err = relative_error(y, factors);
  trace.relerr.push_back(err);
  state.err_history.push_back(err);

  LineSearchHistory<S> history;
  std::size_t stall = 0;
  bool stopped = false;

  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    bool accepted = false;
    const double mu_used = state.mu;
    try {
      if (cfg.algo == Algo::als) {
        factors = als_step(y, factors);
        err = relative_error(y, factors);
        accepted = true;
      } else if (cfg.algo == Algo::als_ls) {
        factors = als_line_search_step(y, factors, history);
        err = relative_error(y, factors);
        accepted = true;
      } else {
        const Vec<S> g = gradient(y, factors);
        const Vec<S> flat = vectorize_factors(factors);
        std::optional<Factors<S>> candidate;
        Variant v = variant_of(cfg.algo);
        if (cfg.algo != Algo::dgn_oracle && v == Variant::flm_b && !kernel_invertible(build_gram_cache(factors))) {
          v = Variant::flm_a;
          ++trace.fallbacks;
        }
        // a numerically singular system counts as a rejected step
        try {
          if (cfg.algo == Algo::dgn_oracle) {
            const Vec<S> step = dense_damped_solve(y, factors, state.mu);
            candidate = unvectorize_factors<S>(flat + step, y.dims(), cfg.rank);
          } else {
            candidate = flm_step(y, factors, state.mu, v);
          }
        } catch (const NumericalError&) {
          candidate.reset();
        }
        double rho = -1.0;
        double new_err = err;
        if (candidate && KruskalModel<S>{*candidate, {}}.rank() == cfg.rank) {
          new_err = relative_error(y, *candidate);
          const Vec<S> delta = vectorize_factors(*candidate) - flat;
          const double denom = real_part<S>(delta.dot(g + S(state.mu) * delta));
          const double gain = (err * err - new_err * new_err) * ynorm2;
          if (std::isfinite(new_err) && std::isfinite(denom) && std::abs(denom) >= 1e-30 && gain > 0.0) {
            rho = gain / denom;
          }
        }
        state = nielsen_update(state, rho);
        if (state.accepted) {
          factors = try_equal_energy(*candidate);
          err = new_err;
          accepted = true;
        }
      }
    } catch (const std::exception& e) {
      trace.stop = StopReason::error;
      trace.error_message = "iteration " + std::to_string(t) + ": " + e.what();
      stopped = true;
      break;
    }

    ++trace.iters;
    if (accepted) ++trace.accepted_iters;
    trace.accepted.push_back(accepted);
    trace.mu.push_back(mu_used);
    const double prev = trace.relerr.back();
    trace.relerr.push_back(err);
    state.err_history.push_back(err);
    if (state.err_history.size() > kStallWindow + 1) state.err_history.erase(state.err_history.begin());

    stall = std::abs(err - prev) < cfg.tol ? stall + 1 : 0;
    if (stall >= kStallWindow) {
      trace.stop = StopReason::tol;
      stopped = true;
      break;
    }
    if (lm && state.mu > kMuOverflow) {
      trace.stop = StopReason::mu_overflow;
      stopped = true;
      break;
    }
  }
  if (!stopped) trace.stop = StopReason::max_iters;

  try {
    result.model = normalize_unit(KruskalModel<S>{factors, {}});
  } catch (const DimensionError&) {
    result.model = KruskalModel<S>{factors, {}};
  }
  return result;
}

#define CPFIT_INSTANTIATE(S)                                                                                         \
  template Mat<S> damped_als_factor<S>(const Tensor<S>&, const Factors<S>&, const GramCache<S>&, std::size_t,        \
                                       double);                                                                     \
  template Vec<S> compute_w<S>(const Factors<S>&, const GramCache<S>&, const Factors<S>&, double);                   \
  template FlmWork<S> prepare_work<S>(const Tensor<S>&, const Factors<S>&, const GramCache<S>&, double);             \
  template std::vector<Mat<S>> solve_B<S>(const GramCache<S>&, const std::vector<Mat<S>>&, const Vec<S>&, Variant,   \
                                          Variant*);                                                                \
  template Factors<S> flm_update<S>(const Factors<S>&, const Factors<S>&, const std::vector<Mat<S>>&,                \
                                    const GramCache<S>&, double);                                                   \
  template Factors<S> flm_step<S>(const Tensor<S>&, const Factors<S>&, double, Variant);                             \
  template double mu_init<S>(const GramCache<S>&, double);                                                           \
  template Factors<S> initial_factors<S>(const Tensor<S>&, const FitConfig&);                                        \
  template FitResult<S> fit<S>(const Tensor<S>&, const FitConfig&);                                                  \
  template FitResult<S> fit<S>(const Tensor<S>&, const FitConfig&, Factors<S>);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
