#pragma once

// Complex-valued CP entry points. These are the complex instantiations of the
// shared kernels; the conjugate/transpose placements live in kruskal.hpp and
// flm.hpp (conjugated Khatri-Rao in MTTKRP, Gamma^(n)^T on the factor side,
// Gt_n (x) A^H A in Psi, real part of the gain-ratio denominator).

#include "cpfit/flm.hpp"
#include "cpfit/kruskal.hpp"

namespace cpfit {

/// Blocks vec(Y_(n) KR^* - A^(n) Gamma^(n)^T) = J^H vec(Y - Yhat).
inline Vec<cplx> complex_gradient(const ComplexTensor& y, const Factors<cplx>& factors) {
  return gradient(y, factors);
}

/// Candidate factors of one complex fLM step at damping mu.
inline Factors<cplx> complex_flm_step(const ComplexTensor& y, const Factors<cplx>& factors, double mu,
                                      Variant variant = Variant::automatic) {
  return flm_step(y, factors, mu, variant);
}

inline FitResult<cplx> fit_complex(const ComplexTensor& y, const FitConfig& cfg) { return fit(y, cfg); }

inline FitResult<cplx> fit_complex(const ComplexTensor& y, const FitConfig& cfg, Factors<cplx> init) {
  return fit(y, cfg, std::move(init));
}

/// Real tensor viewed as complex with zero imaginary parts.
inline ComplexTensor to_complex(const RealTensor& t) {
  return ComplexTensor(t.dims(), t.data().cast<cplx>());
}

inline Factors<cplx> to_complex(const Factors<double>& factors) {
  Factors<cplx> out;
  for (const auto& a : factors) out.push_back(a.cast<cplx>());
  return out;
}

}  // namespace cpfit
