#include "cpfit/hessian.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cpfit/errors.hpp"

namespace cpfit {

void check_oracle_size(std::size_t volume, std::size_t unknowns) {
  if (unknowns > kOracleMaxUnknowns) {
    throw SizeGuardError("dense oracle refuses RT = " + std::to_string(unknowns) + " > " +
                         std::to_string(kOracleMaxUnknowns));
  }
  const std::size_t entries = volume == 0 ? unknowns * unknowns : volume * unknowns;
  if (volume != 0 && unknowns != 0 && entries / unknowns != volume) throw SizeGuardError("dense oracle size overflow");
  if (entries > kOracleMaxEntries) {
    throw SizeGuardError("dense oracle refuses " + std::to_string(entries) + " entries > " +
                         std::to_string(kOracleMaxEntries));
  }
}

namespace {

template <Scalar S>
std::size_t unknown_count(const Factors<S>& factors) {
  std::size_t total = 0;
  for (const auto& a : factors) total += static_cast<std::size_t>(a.size());
  return total;
}

template <Scalar S>
std::vector<Eigen::Index> block_offsets(const Factors<S>& factors) {
  std::vector<Eigen::Index> off(factors.size() + 1, 0);
  for (std::size_t n = 0; n < factors.size(); ++n) off[n + 1] = off[n] + factors[n].size();
  return off;
}

template <Scalar S>
Vec<S> vec_of(const Mat<S>& m) {
  return Eigen::Map<const Vec<S>>(m.data(), m.size());
}

/// M P_R diag(v), formed by column permutation and scaling.
template <Scalar S>
Mat<S> times_kernel_block(const Mat<S>& m, const std::vector<std::size_t>& perm, const Vec<S>& v) {
  Mat<S> out(m.rows(), m.cols());
  for (Eigen::Index q = 0; q < m.cols(); ++q) {
    out.col(q) = v[q] * m.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(q)]));
  }
  return out;
}

template <Scalar S>
void require_modes(const GramCache<S>& cache, std::size_t n, std::size_t m) {
  if (n >= cache.order() || m >= cache.order()) throw DimensionError("mode index out of range");
}

}  // namespace

template <Scalar S>
Mat<S> jacobian(const Factors<S>& factors) {
  KruskalModel<S>{factors, {}}.validate();
  std::vector<std::size_t> dims;
  for (const auto& a : factors) dims.push_back(static_cast<std::size_t>(a.rows()));
  const std::size_t volume = checked_volume(dims);
  const std::size_t unknowns = unknown_count(factors);
  check_oracle_size(volume, unknowns);

  const auto offsets = block_offsets(factors);
  Mat<S> jac = Mat<S>::Zero(static_cast<Eigen::Index>(volume), static_cast<Eigen::Index>(unknowns));
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const auto rows = factors[n].rows();
    const Mat<S> block = kronecker<S>(khatri_rao_excl(factors, n), Mat<S>::Identity(rows, rows));
    const auto perm = mode_commutation_permutation(dims, n);
    for (std::size_t p = 0; p < volume; ++p) {
      jac.row(static_cast<Eigen::Index>(p)).segment(offsets[n], block.cols()) =
          block.row(static_cast<Eigen::Index>(perm[p]));
    }
  }
  return jac;
}

template <Scalar S>
Mat<S> hessian_block(const GramCache<S>& cache, const Factors<S>& factors, std::size_t n, std::size_t m) {
  require_modes(cache, n, m);
  check_oracle_size(0, unknown_count(factors));
  const Eigen::Index rank = factors[n].cols();
  const Eigen::Index in = factors[n].rows();
  const Eigen::Index im = factors[m].rows();
  Mat<S> h = Mat<S>::Zero(rank * in, rank * im);
  if (n == m) {
    return kronecker<S>(cache.gamma_excl[n], Mat<S>::Identity(in, in));
  }
  const Mat<S>& g = cache.pair(n, m);
  for (Eigen::Index s = 0; s < rank; ++s) {
    for (Eigen::Index r = 0; r < rank; ++r) {
      h.block(r * in, s * im, in, im) = g(r, s) * factors[n].col(s) * factors[m].col(r).adjoint();
    }
  }
  return h;
}

template <Scalar S>
Mat<S> assemble_hessian(const Factors<S>& factors) {
  const GramCache<S> cache = build_gram_cache(factors);
  const auto offsets = block_offsets(factors);
  const Eigen::Index total = offsets.back();
  check_oracle_size(0, static_cast<std::size_t>(total));
  Mat<S> h(total, total);
  for (std::size_t n = 0; n < factors.size(); ++n) {
    for (std::size_t m = 0; m < factors.size(); ++m) {
      h.block(offsets[n], offsets[m], factors[n].size(), factors[m].size()) = hessian_block(cache, factors, n, m);
    }
  }
  return h;
}

template <Scalar S>
Mat<S> kernel_matrix(const GramCache<S>& cache) {
  const std::size_t order = cache.order();
  const auto r2 = static_cast<Eigen::Index>(cache.rank() * cache.rank());
  const auto perm = commutation_permutation(cache.rank(), cache.rank());
  Mat<S> k = Mat<S>::Zero(static_cast<Eigen::Index>(order) * r2, static_cast<Eigen::Index>(order) * r2);
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = 0; m < order; ++m) {
      if (n == m) continue;
      const Vec<S> v = vec_of<S>(cache.pair(n, m));
      auto blk = k.block(static_cast<Eigen::Index>(n) * r2, static_cast<Eigen::Index>(m) * r2, r2, r2);
      for (Eigen::Index p = 0; p < r2; ++p) {
        const auto q = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(p)]);
        blk(p, q) = v[q];
      }
    }
  }
  return k;
}

template <Scalar S>
HessianParts<S> build_parts(const GramCache<S>& cache, const Factors<S>& factors) {
  const auto offsets = block_offsets(factors);
  const Eigen::Index total = offsets.back();
  check_oracle_size(0, static_cast<std::size_t>(total));
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Eigen::Index r2 = rank * rank;
  const auto order = static_cast<Eigen::Index>(factors.size());
  HessianParts<S> parts;
  parts.G = Mat<S>::Zero(total, total);
  parts.Z = Mat<S>::Zero(total, order * r2);
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const auto in = factors[n].rows();
    parts.G.block(offsets[n], offsets[n], factors[n].size(), factors[n].size()) =
        kronecker<S>(cache.gamma_excl[n], Mat<S>::Identity(in, in));
    parts.Z.block(offsets[n], static_cast<Eigen::Index>(n) * r2, factors[n].size(), r2) =
        kronecker<S>(Mat<S>::Identity(rank, rank), factors[n]);
  }
  parts.K = kernel_matrix(cache);
  return parts;
}

template <Scalar S>
bool kernel_invertible(const GramCache<S>& cache) {
  const std::size_t order = cache.order();
  if (order < 2) return false;
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  auto scan = [&](const Mat<S>& m) {
    const double mn = m.cwiseAbs().minCoeff();
    const double mx = m.cwiseAbs().maxCoeff();
    lo = std::min(lo, mn);
    hi = std::max(hi, mx);
  };
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = n + 1; m < order; ++m) scan(cache.pair(n, m));
  }
  scan(cache.gamma_full);
  return std::isfinite(lo) && hi > 0.0 && lo > 1e-10 * hi;
}

template <Scalar S>
Mat<S> kernel_inverse(const GramCache<S>& cache) {
  if (!kernel_invertible(cache)) {
    throw SingularKernelError("kernel K is singular: some Gamma^(n,m) entry is (numerically) zero");
  }
  const std::size_t order = cache.order();
  const auto r2 = static_cast<Eigen::Index>(cache.rank() * cache.rank());
  const auto perm = commutation_permutation(cache.rank(), cache.rank());
  const double share = 1.0 / static_cast<double>(order - 1);
  Mat<S> kinv(static_cast<Eigen::Index>(order) * r2, static_cast<Eigen::Index>(order) * r2);
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = 0; m < order; ++m) {
      const double coef = share - (n == m ? 1.0 : 0.0);
      const Mat<S> d = cache.C[n].cwiseProduct(cache.C[m]).cwiseQuotient(cache.gamma_full);
      const Vec<S> v = vec_of<S>(d);
      auto blk = kinv.block(static_cast<Eigen::Index>(n) * r2, static_cast<Eigen::Index>(m) * r2, r2, r2);
      blk.setZero();
      if (coef == 0.0) continue;
      for (Eigen::Index p = 0; p < r2; ++p) {
        blk(p, static_cast<Eigen::Index>(perm[static_cast<std::size_t>(p)])) = coef * v[p];
      }
    }
  }
  return kinv;
}

template <Scalar S>
Vec<S> dense_damped_solve(const Tensor<S>& y, const Factors<S>& factors, double mu) {
  if (!(mu >= 0.0)) throw DimensionError("dense_damped_solve: mu must be non-negative");
  const Mat<S> jac = jacobian(factors);
  const Tensor<S> yhat = reconstruct(factors);
  if (yhat.dims() != y.dims()) throw DimensionError("dense_damped_solve: model dims differ from tensor dims");
  const Vec<S> g = jac.adjoint() * (y.data() - yhat.data());
  Mat<S> h = jac.adjoint() * jac;
  h.diagonal().array() += S(mu);
  Eigen::PartialPivLU<Mat<S>> lu(h);
  Vec<S> step = lu.solve(g);
  if (!step.allFinite()) throw NumericalError("dense_damped_solve: singular damped Hessian");
  return step;
}

template <Scalar S>
std::vector<Mat<S>> gamma_tilde(const GramCache<S>& cache, double mu) {
  std::vector<Mat<S>> out;
  out.reserve(cache.order());
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  for (const auto& g : cache.gamma_excl) {
    Mat<S> shifted = g;
    shifted.diagonal().array() += S(mu);
    Eigen::LDLT<Mat<S>> ldlt(shifted);
    Mat<S> inv;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      inv = ldlt.solve(Mat<S>::Identity(rank, rank));
    } else {
      inv = shifted.partialPivLu().inverse();
    }
    if (!inv.allFinite()) throw NumericalError("gamma_tilde: Gamma^(n) + mu I is singular");
    out.push_back(std::move(inv));
  }
  return out;
}

template <Scalar S>
std::vector<Mat<S>> psi_blocks(const GramCache<S>& cache, const std::vector<Mat<S>>& gt) {
  std::vector<Mat<S>> out;
  out.reserve(gt.size());
  for (std::size_t n = 0; n < gt.size(); ++n) out.push_back(kronecker<S>(gt[n], cache.C[n]));
  return out;
}

template <Scalar S>
Mat<S> assemble_phi1(const GramCache<S>& cache, const std::vector<Mat<S>>& psi) {
  const std::size_t order = cache.order();
  const auto r2 = static_cast<Eigen::Index>(cache.rank() * cache.rank());
  const auto perm = commutation_permutation(cache.rank(), cache.rank());
  const Eigen::Index dim = static_cast<Eigen::Index>(order) * r2;
  Mat<S> phi = Mat<S>::Identity(dim, dim);
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = 0; m < order; ++m) {
      if (n == m) continue;  // K^(n,n) = 0
      phi.block(static_cast<Eigen::Index>(n) * r2, static_cast<Eigen::Index>(m) * r2, r2, r2) =
          times_kernel_block<S>(psi[n], perm, vec_of<S>(cache.pair(n, m)));
    }
  }
  return phi;
}

template <Scalar S>
Mat<S> assemble_phi2(const GramCache<S>& cache, const std::vector<Mat<S>>& psi) {
  Mat<S> phi = kernel_inverse(cache);
  const auto r2 = static_cast<Eigen::Index>(cache.rank() * cache.rank());
  for (std::size_t n = 0; n < cache.order(); ++n) {
    phi.block(static_cast<Eigen::Index>(n) * r2, static_cast<Eigen::Index>(n) * r2, r2, r2) += psi[n];
  }
  return phi;
}

template <Scalar S>
Variant resolve_variant(const GramCache<S>& cache, Variant requested) {
  switch (requested) {
    case Variant::flm_a:
      return Variant::flm_a;
    case Variant::flm_b:
      if (!kernel_invertible(cache)) throw SingularKernelError("fLM_b requested but kernel K is singular");
      return Variant::flm_b;
    case Variant::automatic:
      break;
  }
  return kernel_invertible(cache) ? Variant::flm_b : Variant::flm_a;
}

namespace {

template <Scalar S>
Eigen::PartialPivLU<Mat<S>> checked_lu(const Mat<S>& m, const char* what) {
  Eigen::PartialPivLU<Mat<S>> lu(m);
  const double rc = lu.rcond();
  if (!(rc > std::numeric_limits<double>::epsilon())) {
    throw NumericalError(std::string(what) + " is numerically singular (rcond " + std::to_string(rc) + ")");
  }
  return lu;
}

}  // namespace

template <Scalar S>
Mat<S> damped_core(const GramCache<S>& cache, const std::vector<Mat<S>>& psi, Variant variant) {
  const Variant v = resolve_variant(cache, variant);
  if (v == Variant::flm_b) {
    const Mat<S> phi = assemble_phi2(cache, psi);
    return checked_lu<S>(phi, "K^{-1} + Psi").inverse();
  }
  const Mat<S> phi = assemble_phi1(cache, psi);
  const auto lu = checked_lu<S>(phi, "I + Psi K");
  const Mat<S> k = kernel_matrix(cache);
  return k * lu.inverse();
}

template <Scalar S>
std::size_t StructuredInverse<S>::storage_size() const {
  std::size_t total = 0;
  for (const auto& g : gamma_tilde) total += static_cast<std::size_t>(g.size());
  for (const auto& s : s_blocks) total += static_cast<std::size_t>(s.size());
  return total;
}

template <Scalar S>
StructuredInverse<S> fast_damped_inverse(const GramCache<S>& cache, double mu, Variant variant) {
  if (!(mu > 0.0)) throw DimensionError("fast_damped_inverse: mu must be positive");
  StructuredInverse<S> inv;
  inv.mu = mu;
  inv.gamma_tilde = gamma_tilde(cache, mu);
  const auto psi = psi_blocks(cache, inv.gamma_tilde);
  Mat<S> b;
  try {
    b = damped_core(cache, psi, variant);
  } catch (const NumericalError&) {
    if (variant != Variant::automatic) throw;
    b = damped_core(cache, psi, Variant::flm_a);
  }
  const std::size_t order = cache.order();
  const auto rank = static_cast<Eigen::Index>(cache.rank());
  const Eigen::Index r2 = rank * rank;
  const Mat<S> eye = Mat<S>::Identity(rank, rank);
  std::vector<Mat<S>> left;
  for (const auto& g : inv.gamma_tilde) left.push_back(kronecker<S>(g, eye));
  inv.s_blocks.resize(order * order);
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = 0; m < order; ++m) {
      inv.s_blocks[n * order + m] =
          left[n] * b.block(static_cast<Eigen::Index>(n) * r2, static_cast<Eigen::Index>(m) * r2, r2, r2) * left[m];
    }
  }
  return inv;
}

template <Scalar S>
Mat<S> materialize_inverse(const StructuredInverse<S>& inv, const Factors<S>& factors) {
  if (factors.size() != inv.order()) throw DimensionError("materialize_inverse: order mismatch");
  const auto offsets = block_offsets(factors);
  const Eigen::Index total = offsets.back();
  check_oracle_size(0, static_cast<std::size_t>(total));
  const Eigen::Index rank = factors.front().cols();
  const Mat<S> eye = Mat<S>::Identity(rank, rank);
  std::vector<Mat<S>> z;
  for (const auto& a : factors) z.push_back(kronecker<S>(eye, a));
  Mat<S> out(total, total);
  for (std::size_t n = 0; n < factors.size(); ++n) {
    for (std::size_t m = 0; m < factors.size(); ++m) {
      Mat<S> blk = -(z[n] * inv.block(n, m) * z[m].adjoint());
      if (n == m) {
        const auto in = factors[n].rows();
        blk += kronecker<S>(inv.gamma_tilde[n], Mat<S>::Identity(in, in));
      }
      out.block(offsets[n], offsets[m], blk.rows(), blk.cols()) = blk;
    }
  }
  return out;
}

Rational phi_density(std::size_t order, std::size_t rank, Variant variant) {
  if (order < 2 || rank < 1) throw DimensionError("phi_density requires N >= 2 and R >= 1");
  const std::uint64_t r2 = static_cast<std::uint64_t>(rank) * rank;
  const std::uint64_t n = order;
  Rational q;
  q.den = n * r2;
  switch (variant) {
    case Variant::flm_a:
      q.num = (n - 1) * r2 + 1;
      break;
    case Variant::flm_b:
      q.num = r2 + n - 1;
      break;
    case Variant::automatic:
      throw DimensionError("phi_density needs an explicit variant");
  }
  const std::uint64_t g = std::gcd(q.num, q.den);
  q.num /= g;
  q.den /= g;
  return q;
}

#define CPFIT_INSTANTIATE(S)                                                                         \
  template Mat<S> jacobian<S>(const Factors<S>&);                                                    \
  template Mat<S> hessian_block<S>(const GramCache<S>&, const Factors<S>&, std::size_t, std::size_t); \
  template Mat<S> assemble_hessian<S>(const Factors<S>&);                                            \
  template HessianParts<S> build_parts<S>(const GramCache<S>&, const Factors<S>&);                   \
  template Mat<S> kernel_matrix<S>(const GramCache<S>&);                                             \
  template bool kernel_invertible<S>(const GramCache<S>&);                                           \
  template Mat<S> kernel_inverse<S>(const GramCache<S>&);                                            \
  template Vec<S> dense_damped_solve<S>(const Tensor<S>&, const Factors<S>&, double);                \
  template std::vector<Mat<S>> gamma_tilde<S>(const GramCache<S>&, double);                          \
  template std::vector<Mat<S>> psi_blocks<S>(const GramCache<S>&, const std::vector<Mat<S>>&);       \
  template Mat<S> assemble_phi1<S>(const GramCache<S>&, const std::vector<Mat<S>>&);                 \
  template Mat<S> assemble_phi2<S>(const GramCache<S>&, const std::vector<Mat<S>>&);                 \
  template Variant resolve_variant<S>(const GramCache<S>&, Variant);                                 \
  template Mat<S> damped_core<S>(const GramCache<S>&, const std::vector<Mat<S>>&, Variant);          \
  template struct StructuredInverse<S>;                                                              \
  template StructuredInverse<S> fast_damped_inverse<S>(const GramCache<S>&, double, Variant);        \
  template Mat<S> materialize_inverse<S>(const StructuredInverse<S>&, const Factors<S>&);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
