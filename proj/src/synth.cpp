#include "cpfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cpfit/errors.hpp"
#include "cpfit/random.hpp"

namespace cpfit {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

double to_db(double squared) {
  if (!(squared > 0.0)) return kMedsaeFloorDb;
  return std::max(kMedsaeFloorDb, 10.0 * std::log10(squared));
}

}  // namespace

template <Scalar S>
CollinearProblem<S> gen_collinear(const CollinearSpec& spec) {
  if (spec.dims.empty()) throw DimensionError("gen_collinear: dims must be non-empty");
  checked_volume(spec.dims);
  if (spec.rank < 1) throw DimensionError("gen_collinear: rank must be at least 1");
  if (!(spec.nu > 0.0) || !std::isfinite(spec.nu)) throw DimensionError("gen_collinear: nu must be positive");
  const std::size_t min_dim = *std::min_element(spec.dims.begin(), spec.dims.end());
  if (spec.rank > min_dim) {
    throw DimensionError("gen_collinear: rank " + std::to_string(spec.rank) + " exceeds the smallest dimension " +
                         std::to_string(min_dim));
  }
  Rng rng(spec.seed, Stream::factors);
  const auto rank = static_cast<Eigen::Index>(spec.rank);
  CollinearProblem<S> out;
  for (std::size_t d : spec.dims) {
    const auto rows = static_cast<Eigen::Index>(d);
    const Mat<S> g = rng.gaussian<S>(rows, rank);
    Eigen::HouseholderQR<Mat<S>> qr(g);
    const Mat<S> u = qr.householderQ() * Mat<S>::Identity(rows, rank);
    Mat<S> a(rows, rank);
    a.col(0) = u.col(0);
    for (Eigen::Index r = 1; r < rank; ++r) a.col(r) = u.col(0) + spec.nu * u.col(r);
    out.truth.factors.push_back(std::move(a));
  }
  out.tensor = reconstruct(out.truth);
  if (spec.snr_db && std::isfinite(*spec.snr_db)) out.noisy = add_noise(out.tensor, *spec.snr_db, spec.seed);
  return out;
}

template <Scalar S>
std::vector<double> component_magnitudes(const KruskalModel<S>& model) {
  model.validate();
  const Vec<S> lambda = model.effective_weights();
  std::vector<double> mags;
  for (std::size_t r = 0; r < model.rank(); ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    double m = std::abs(lambda[c]);
    for (const auto& a : model.factors) m *= a.col(c).norm();
    mags.push_back(m);
  }
  return mags;
}

CollinearAngles collinearity_angles(double nu) {
  if (!(nu > 0.0)) throw DimensionError("collinearity_angles: nu must be positive");
  return {std::atan(nu) * kDeg, std::atan(nu * std::sqrt(nu * nu + 2.0)) * kDeg};
}

template <Scalar S>
double vector_angle_deg(const Vec<S>& u, const Vec<S>& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw DimensionError("vector_angle_deg: zero vector");
  const double c = std::min(1.0, std::abs(u.dot(v)) / (nu * nv));
  return std::acos(c) * kDeg;
}

double noise_sigma(double norm2, std::size_t volume, double snr_db) {
  if (!(norm2 > 0.0)) throw DimensionError("noise calibration needs a nonzero tensor");
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::sqrt(norm2 / (std::pow(10.0, snr_db / 10.0) * static_cast<double>(volume)));
}

template <Scalar S>
Tensor<S> add_noise(const Tensor<S>& y, double snr_db, std::uint64_t seed) {
  if (std::isnan(snr_db)) throw DimensionError("add_noise: SNR is NaN");
  const double sigma = noise_sigma(y.data().squaredNorm(), y.size(), snr_db);
  if (sigma == 0.0) return y;
  Rng rng(seed, Stream::noise);
  Vec<S> data = y.data();
  for (Eigen::Index k = 0; k < data.size(); ++k) data[k] += sigma * rng.standard<S>();
  return Tensor<S>(y.dims(), std::move(data));
}

template <Scalar S>
double measured_snr_db(const Tensor<S>& clean, const Tensor<S>& noisy) {
  const double noise = (noisy.data() - clean.data()).squaredNorm();
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(clean.data().squaredNorm() / noise);
}

Mat<double> collinear_q(std::size_t rank, double nu) {
  const auto r = static_cast<Eigen::Index>(rank);
  Mat<double> q = Mat<double>::Zero(r, r);
  q.row(0).setOnes();
  for (Eigen::Index k = 1; k < r; ++k) q(k, k) = nu;
  return q;
}

SpectrumReport spectrum(std::size_t size, std::size_t rank, std::size_t order, double nu, double snr_db) {
  if (rank < 2) throw DimensionError("spectrum requires R >= 2");
  if (order < 2) throw DimensionError("spectrum requires N >= 2");
  if (size < rank) throw DimensionError("spectrum requires I >= R");
  if (!(nu > 0.0)) throw DimensionError("spectrum requires nu > 0");
  SpectrumReport rep;
  const double r = static_cast<double>(rank);
  rep.x = 1.0 + nu * nu;
  rep.y = std::pow(rep.x, static_cast<double>(order - 1));
  rep.lam_mid = (rep.x - 1.0) * (rep.y - 1.0);
  const double sum = rep.x * rep.y + (r - 2.0) * (r + rep.x + rep.y) + 3.0;
  const double prod = rep.lam_mid;
  const double disc = std::sqrt(std::max(0.0, sum * sum - 4.0 * prod));
  rep.lam_max = 0.5 * (sum + disc);
  // smaller root from the product avoids cancellation
  rep.lam_min = prod / rep.lam_max;
  rep.norm2 = r * r + (r - 1.0) * (rep.x * rep.y - 1.0);
  const double volume = std::pow(static_cast<double>(size), static_cast<double>(order));
  if (std::isinf(snr_db) && snr_db > 0) {
    rep.sigma2 = 0.0;
  } else {
    rep.sigma2 = rep.norm2 / (std::pow(10.0, snr_db / 10.0) * volume);
  }
  rep.noise_floor = rep.sigma2 * std::pow(static_cast<double>(size), static_cast<double>(order - 1));
  rep.feasible = rep.lam_min > rep.noise_floor;
  return rep;
}

std::vector<std::size_t> hungarian(const Mat<double>& cost) {
  if (cost.rows() != cost.cols()) throw DimensionError("hungarian: cost matrix must be square");
  const auto n = static_cast<std::size_t>(cost.rows());
  // Potentials formulation (1-based rows/columns, column 0 is a sentinel).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

namespace {

/// Angle between the lines spanned by u and v, accurate near zero.
template <Scalar S>
double line_angle(const Vec<S>& u, const Vec<S>& v) {
  const Vec<S> a = u / u.norm();
  const Vec<S> b = v / v.norm();
  const S inner = b.dot(a);  // b^H a
  S phase = S(1);
  if (std::abs(inner) > 0.0) phase = inner / std::abs(inner);
  const double d = (a - phase * b).norm();
  return 2.0 * std::asin(std::min(1.0, 0.5 * d));
}

}  // namespace

template <Scalar S>
ComponentAngles component_angles(const KruskalModel<S>& truth, const KruskalModel<S>& estimate) {
  truth.validate();
  estimate.validate();
  if (truth.rank() != estimate.rank()) throw DimensionError("medsae: rank mismatch between truth and estimate");
  if (truth.dims() != estimate.dims()) throw DimensionError("medsae: dims mismatch between truth and estimate");
  const auto rank = static_cast<Eigen::Index>(truth.rank());
  const std::size_t order = truth.order();

  Mat<double> cost(rank, rank);
  for (Eigen::Index r = 0; r < rank; ++r) {
    for (Eigen::Index s = 0; s < rank; ++s) {
      double congruence = 1.0;
      for (std::size_t n = 0; n < order; ++n) {
        const auto& a = truth.factors[n].col(r);
        const auto& b = estimate.factors[n].col(s);
        const double denom = a.norm() * b.norm();
        congruence *= denom > 0.0 ? std::abs(b.dot(a)) / denom : 0.0;
      }
      cost(r, s) = -congruence;
    }
  }
  ComponentAngles out;
  out.match = hungarian(cost);
  out.alpha.assign(order, std::vector<double>(truth.rank(), 0.0));
  for (std::size_t n = 0; n < order; ++n) {
    for (Eigen::Index r = 0; r < rank; ++r) {
      const Vec<S> a = truth.factors[n].col(r);
      const Vec<S> b = estimate.factors[n].col(static_cast<Eigen::Index>(out.match[static_cast<std::size_t>(r)]));
      if (!(a.norm() > 0.0) || !(b.norm() > 0.0)) {
        out.alpha[n][static_cast<std::size_t>(r)] = std::numbers::pi / 2.0;
      } else {
        out.alpha[n][static_cast<std::size_t>(r)] = line_angle<S>(a, b);
      }
    }
  }
  return out;
}

MedsaeReport medsae(const std::vector<ComponentAngles>& runs) {
  if (runs.empty()) throw DimensionError("medsae: no runs");
  const std::size_t order = runs.front().alpha.size();
  const std::size_t rank = order ? runs.front().alpha.front().size() : 0;
  for (const auto& run : runs) {
    if (run.alpha.size() != order || (order && run.alpha.front().size() != rank)) {
      throw DimensionError("medsae: runs have inconsistent shapes");
    }
  }
  MedsaeReport rep;
  rep.per_component.assign(order, std::vector<double>(rank, kMedsaeFloorDb));
  double first = 0.0;
  double rest = 0.0;
  for (std::size_t n = 0; n < order; ++n) {
    for (std::size_t r = 0; r < rank; ++r) {
      std::vector<double> sq;
      sq.reserve(runs.size());
      for (const auto& run : runs) sq.push_back(run.alpha[n][r] * run.alpha[n][r]);
      const double db = to_db(median_of(std::move(sq)));
      rep.per_component[n][r] = db;
      if (r == 0) {
        first += db;
      } else {
        rest += db;
      }
    }
  }
  rep.first_db = order ? first / static_cast<double>(order) : kMedsaeFloorDb;
  if (rank >= 2) rep.rest_db = rest / static_cast<double>(order * (rank - 1));
  return rep;
}

#define CPFIT_INSTANTIATE(S)                                                                     \
  template CollinearProblem<S> gen_collinear<S>(const CollinearSpec&);                           \
  template std::vector<double> component_magnitudes<S>(const KruskalModel<S>&);                  \
  template double vector_angle_deg<S>(const Vec<S>&, const Vec<S>&);                             \
  template Tensor<S> add_noise<S>(const Tensor<S>&, double, std::uint64_t);                      \
  template double measured_snr_db<S>(const Tensor<S>&, const Tensor<S>&);                        \
  template ComponentAngles component_angles<S>(const KruskalModel<S>&, const KruskalModel<S>&);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
