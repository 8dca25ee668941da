#include "cpfit/kruskal.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cpfit/errors.hpp"

namespace cpfit {

namespace {

template <Scalar S>
S unit_phase(S value) {
  const double mag = std::abs(value);
  if (mag == 0.0) return S(1);
  return value / mag;
}

template <Scalar S>
S conj_of(S value) {
  if constexpr (std::is_same_v<S, double>) {
    return value;
  } else {
    return std::conj(value);
  }
}

/// Phase of the largest-magnitude entry (first one on ties).
template <class Col>
auto dominant_phase(const Col& col) {
  using S = typename Col::Scalar;
  Eigen::Index best = 0;
  double best_mag = -1.0;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    const double mag = std::abs(col[i]);
    if (mag > best_mag) {
      best_mag = mag;
      best = i;
    }
  }
  return unit_phase<S>(col[best]);
}

template <Scalar S>
Mat<S> transpose_of(const Mat<S>& m) {
  return m.transpose();
}

}  // namespace

template <Scalar S>
std::vector<std::size_t> KruskalModel<S>::dims() const {
  std::vector<std::size_t> d;
  d.reserve(factors.size());
  for (const auto& f : factors) d.push_back(static_cast<std::size_t>(f.rows()));
  return d;
}

template <Scalar S>
Vec<S> KruskalModel<S>::effective_weights() const {
  if (weights.size() == 0) return Vec<S>::Ones(static_cast<Eigen::Index>(rank()));
  return weights;
}

template <Scalar S>
void KruskalModel<S>::validate() const {
  if (factors.empty()) throw DimensionError("model has no factors");
  const Eigen::Index r = factors.front().cols();
  if (r < 1) throw DimensionError("model rank must be at least 1");
  for (const auto& f : factors) {
    if (f.cols() != r) throw DimensionError("factors have inconsistent column counts");
    if (f.rows() < 1) throw DimensionError("factor with zero rows");
  }
  if (weights.size() != 0 && weights.size() != r) throw DimensionError("weight vector length differs from rank");
}

template <Scalar S>
Factors<S> absorb_weights(const KruskalModel<S>& model) {
  model.validate();
  Factors<S> out = model.factors;
  if (model.weights.size() != 0) out.back() = out.back() * model.weights.asDiagonal();
  return out;
}

template <Scalar S>
GramCache<S> build_gram_cache(const Factors<S>& factors) {
  KruskalModel<S>{factors, {}}.validate();
  const std::size_t order = factors.size();
  const auto rank = factors.front().cols();
  GramCache<S> cache;
  cache.C.reserve(order);
  for (const auto& a : factors) cache.C.push_back(a.adjoint() * a);

  cache.gamma_pair.assign(order * order, Mat<S>::Ones(rank, rank));
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t m = n; m < order; ++m) {
      Mat<S> g = Mat<S>::Ones(rank, rank);
      for (std::size_t k = 0; k < order; ++k) {
        if (k != n && k != m) g = g.cwiseProduct(cache.C[k]);
      }
      cache.gamma_pair[n * order + m] = g;
      cache.gamma_pair[m * order + n] = g;
    }
  }
  cache.gamma_excl.reserve(order);
  for (std::size_t n = 0; n < order; ++n) cache.gamma_excl.push_back(cache.gamma_pair[n * order + n]);
  cache.gamma_full = cache.C[0].cwiseProduct(cache.gamma_excl[0]);
  return cache;
}

template <Scalar S>
Tensor<S> reconstruct(const KruskalModel<S>& model) {
  model.validate();
  const std::vector<std::size_t> dims = model.dims();
  const Mat<S> kr = khatri_rao_excl(model.factors, 0);
  const Mat<S> y1 = model.factors[0] * model.effective_weights().asDiagonal() * kr.transpose();
  return Tensor<S>(dims, Eigen::Map<const Vec<S>>(y1.data(), y1.size()));
}

template <Scalar S>
Mat<S> mttkrp(const Tensor<S>& y, const Factors<S>& factors, std::size_t n) {
  KruskalModel<S>{factors, {}}.validate();
  if (y.order() != factors.size()) throw DimensionError("mttkrp: tensor order differs from factor count");
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (static_cast<std::size_t>(factors[k].rows()) != y.dim(k)) {
      throw DimensionError("mttkrp: factor " + std::to_string(k) + " rows differ from tensor dim");
    }
  }
  const Mat<S> kr = khatri_rao_excl(factors, n);
  return unfold(y, n) * kr.conjugate();
}

template <Scalar S>
Vec<S> gradient(const Tensor<S>& y, const Factors<S>& factors) {
  const GramCache<S> cache = build_gram_cache(factors);
  Eigen::Index total = 0;
  for (const auto& a : factors) total += a.size();
  Vec<S> g(total);
  Eigen::Index offset = 0;
  for (std::size_t n = 0; n < factors.size(); ++n) {
    const Mat<S> block = mttkrp(y, factors, n) - factors[n] * transpose_of(cache.gamma_excl[n]);
    g.segment(offset, block.size()) = Eigen::Map<const Vec<S>>(block.data(), block.size());
    offset += block.size();
  }
  return g;
}

template <Scalar S>
double relative_error(const Tensor<S>& y, const KruskalModel<S>& model) {
  const double ynorm = y.norm();
  if (!(ynorm > 0.0)) throw DimensionError("relative_error: data tensor has zero norm");
  const Tensor<S> yhat = reconstruct(model);
  if (yhat.dims() != y.dims()) throw DimensionError("relative_error: model dims differ from tensor dims");
  return (y.data() - yhat.data()).norm() / ynorm;
}

template <Scalar S>
Vec<S> vectorize_factors(const Factors<S>& factors) {
  Eigen::Index total = 0;
  for (const auto& a : factors) total += a.size();
  Vec<S> flat(total);
  Eigen::Index offset = 0;
  for (const auto& a : factors) {
    flat.segment(offset, a.size()) = Eigen::Map<const Vec<S>>(a.data(), a.size());
    offset += a.size();
  }
  return flat;
}

template <Scalar S>
Factors<S> unvectorize_factors(const Vec<S>& flat, const std::vector<std::size_t>& dims, std::size_t rank) {
  Factors<S> out;
  out.reserve(dims.size());
  Eigen::Index offset = 0;
  const auto r = static_cast<Eigen::Index>(rank);
  for (std::size_t d : dims) {
    const auto rows = static_cast<Eigen::Index>(d);
    if (offset + rows * r > flat.size()) throw DimensionError("unvectorize_factors: vector too short");
    out.push_back(Eigen::Map<const Mat<S>>(flat.data() + offset, rows, r));
    offset += rows * r;
  }
  if (offset != flat.size()) throw DimensionError("unvectorize_factors: vector length mismatch");
  return out;
}

namespace {

struct ComponentScales {
  std::vector<std::vector<double>> norms;  // [r][n]
};

template <Scalar S>
ComponentScales component_norms(const KruskalModel<S>& model) {
  ComponentScales s;
  const std::size_t rank = model.rank();
  s.norms.assign(rank, std::vector<double>(model.order()));
  for (std::size_t r = 0; r < rank; ++r) {
    for (std::size_t n = 0; n < model.order(); ++n) {
      const double nrm = model.factors[n].col(static_cast<Eigen::Index>(r)).norm();
      if (!(nrm > 0.0)) {
        throw DimensionError("component " + std::to_string(r) + " has a zero vector in mode " + std::to_string(n));
      }
      s.norms[r][n] = nrm;
    }
  }
  return s;
}

}  // namespace

template <Scalar S>
KruskalModel<S> normalize_equal_energy(const KruskalModel<S>& model) {
  model.validate();
  const ComponentScales s = component_norms(model);
  const Vec<S> lambda = model.effective_weights();
  const std::size_t order = model.order();
  KruskalModel<S> out{model.factors, {}};
  for (std::size_t r = 0; r < model.rank(); ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    if (std::abs(lambda[c]) == 0.0) throw DimensionError("component " + std::to_string(r) + " has zero weight");
    double log_mag = std::log(std::abs(lambda[c]));
    for (double nrm : s.norms[r]) log_mag += std::log(nrm);
    const double per_mode = std::exp(log_mag / static_cast<double>(order));
    S carried = unit_phase<S>(lambda[c]);
    for (std::size_t n = 0; n < order; ++n) {
      auto col = out.factors[n].col(c);
      col /= s.norms[r][n];
      if (n + 1 < order) {
        const S ph = dominant_phase(col);
        col *= conj_of(ph);
        carried *= ph;
      } else {
        col *= carried;
      }
      col *= per_mode;
    }
  }
  return out;
}

template <Scalar S>
KruskalModel<S> normalize_unit(const KruskalModel<S>& model) {
  model.validate();
  const ComponentScales s = component_norms(model);
  KruskalModel<S> out{model.factors, model.effective_weights()};
  for (std::size_t r = 0; r < model.rank(); ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    for (std::size_t n = 0; n < model.order(); ++n) {
      auto col = out.factors[n].col(c);
      col /= s.norms[r][n];
      const S ph = dominant_phase(col);
      col *= conj_of(ph);
      out.weights[c] *= ph * s.norms[r][n];
    }
  }
  return out;
}

template <Scalar S>
Factors<S> normalize_last_mode(const KruskalModel<S>& model) {
  model.validate();
  const ComponentScales s = component_norms(model);
  Factors<S> out = absorb_weights(model);
  const std::size_t last = model.order() - 1;
  for (std::size_t r = 0; r < model.rank(); ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    for (std::size_t n = 0; n < last; ++n) {
      out[n].col(c) /= s.norms[r][n];
      out[last].col(c) *= s.norms[r][n];
    }
  }
  return out;
}

template <Scalar S>
Factors<S> svd_init(const Tensor<S>& y, std::size_t rank, Rng& rng) {
  if (rank < 1) throw DimensionError("svd_init: rank must be at least 1");
  const auto r = static_cast<Eigen::Index>(rank);
  Factors<S> out;
  out.reserve(y.order());
  for (std::size_t n = 0; n < y.order(); ++n) {
    const Mat<S> yn = unfold(y, n);
    const Mat<S> gram = yn * yn.adjoint();
    Eigen::SelfAdjointEigenSolver<Mat<S>> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("svd_init: eigendecomposition failed");
    const Eigen::Index rows = yn.rows();
    Mat<S> a(rows, r);
    const Eigen::Index kept = std::min(rows, r);
    for (Eigen::Index j = 0; j < kept; ++j) a.col(j) = eig.eigenvectors().col(rows - 1 - j);
    for (Eigen::Index j = kept; j < r; ++j) {
      Vec<S> v = rng.gaussian<S>(rows, 1);
      a.col(j) = v / v.norm();
    }
    out.push_back(std::move(a));
  }
  return out;
}

template <Scalar S>
Factors<S> random_init(const std::vector<std::size_t>& dims, std::size_t rank, Rng& rng) {
  if (rank < 1) throw DimensionError("random_init: rank must be at least 1");
  Factors<S> out;
  for (std::size_t d : dims) out.push_back(rng.gaussian<S>(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rank)));
  return out;
}

template <Scalar S>
Mat<S> hermitian_pinv(const Mat<S>& m) {
  Eigen::SelfAdjointEigenSolver<Mat<S>> eig(m);
  if (eig.info() != Eigen::Success) throw NumericalError("hermitian_pinv: eigendecomposition failed");
  const auto& values = eig.eigenvalues();
  const double largest = values.cwiseAbs().maxCoeff();
  const double cutoff = std::numeric_limits<double>::epsilon() * static_cast<double>(m.rows()) * largest;
  Vec<double> inv(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) inv[i] = values[i] > cutoff ? 1.0 / values[i] : 0.0;
  const Mat<S>& v = eig.eigenvectors();
  return v * inv.template cast<S>().asDiagonal() * v.adjoint();
}

template <Scalar S>
Factors<S> als_step(const Tensor<S>& y, const Factors<S>& factors) {
  Factors<S> a = factors;
  const std::size_t order = a.size();
  std::vector<Mat<S>> grams;
  grams.reserve(order);
  for (const auto& f : a) grams.push_back(f.adjoint() * f);
  const auto rank = a.front().cols();
  for (std::size_t n = 0; n < order; ++n) {
    Mat<S> gamma = Mat<S>::Ones(rank, rank);
    for (std::size_t k = 0; k < order; ++k) {
      if (k != n) gamma = gamma.cwiseProduct(grams[k]);
    }
    // Y_(n) KR^* (Gamma^T)^+ solves min ||Y_(n) - A KR^T||.
    a[n] = mttkrp(y, a, n) * hermitian_pinv<S>(gamma.transpose());
    grams[n] = a[n].adjoint() * a[n];
  }
  return a;
}

template <Scalar S>
Factors<S> als_line_search_step(const Tensor<S>& y, const Factors<S>& factors, LineSearchHistory<S>& history) {
  Factors<S> als = als_step(y, factors);
  const std::size_t t = ++history.iteration;
  if (!history.previous) {
    history.previous = factors;
    return als;
  }
  const Factors<S>& prev = *history.previous;
  Factors<S> best = als;
  double best_err = relative_error(y, als);
  for (double s : {1.1, std::cbrt(static_cast<double>(t))}) {
    Factors<S> cand(als.size());
    for (std::size_t n = 0; n < als.size(); ++n) cand[n] = prev[n] + s * (als[n] - prev[n]);
    const double err = relative_error(y, cand);
    if (err < best_err) {
      best_err = err;
      best = std::move(cand);
    }
  }
  history.previous = factors;
  return best;
}

#define CPFIT_INSTANTIATE(S)                                                                                \
  template struct KruskalModel<S>;                                                                          \
  template Factors<S> absorb_weights<S>(const KruskalModel<S>&);                                           \
  template GramCache<S> build_gram_cache<S>(const Factors<S>&);                                            \
  template Tensor<S> reconstruct<S>(const KruskalModel<S>&);                                               \
  template Mat<S> mttkrp<S>(const Tensor<S>&, const Factors<S>&, std::size_t);                             \
  template Vec<S> gradient<S>(const Tensor<S>&, const Factors<S>&);                                        \
  template double relative_error<S>(const Tensor<S>&, const KruskalModel<S>&);                             \
  template Vec<S> vectorize_factors<S>(const Factors<S>&);                                                 \
  template Factors<S> unvectorize_factors<S>(const Vec<S>&, const std::vector<std::size_t>&, std::size_t); \
  template KruskalModel<S> normalize_equal_energy<S>(const KruskalModel<S>&);                              \
  template KruskalModel<S> normalize_unit<S>(const KruskalModel<S>&);                                      \
  template Factors<S> normalize_last_mode<S>(const KruskalModel<S>&);                                      \
  template Factors<S> svd_init<S>(const Tensor<S>&, std::size_t, Rng&);                                    \
  template Factors<S> random_init<S>(const std::vector<std::size_t>&, std::size_t, Rng&);                  \
  template Mat<S> hermitian_pinv<S>(const Mat<S>&);                                                        \
  template Factors<S> als_step<S>(const Tensor<S>&, const Factors<S>&);                                    \
  template Factors<S> als_line_search_step<S>(const Tensor<S>&, const Factors<S>&, LineSearchHistory<S>&);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
