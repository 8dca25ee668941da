#pragma once

// Seeded randomness shared by initialization, benchmark generation and noise.
//
// Every consumer derives its own stream from one 64-bit base seed:
//   stream_seed(base, stream) = splitmix64(base + (stream + 1) * 0x9E3779B97F4A7C15)
// and feeds it to std::mt19937_64, whose output sequence is fixed by the
// standard. Gaussian and uniform variates are built from raw engine output
// here (not via <random> distributions, whose algorithms are
// implementation-defined), so a seed reproduces bit-identical data on every
// conforming platform.

#include <cstdint>
#include <random>

#include "cpfit/tensor.hpp"

namespace cpfit {

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream);

/// Fixed stream ids so independent consumers of one base seed never overlap.
enum class Stream : std::uint64_t {
  init = 1,
  factors = 2,
  noise = 3,
  svd_padding = 4,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t base, Stream stream) : engine_(stream_seed(base, static_cast<std::uint64_t>(stream))) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller, cached second variate).
  double normal();
  /// Standard normal of scalar type S; complex draws are circular with unit
  /// total variance (real and imaginary parts each N(0, 1/2)).
  template <Scalar S>
  S standard();

  template <Scalar S>
  Mat<S> gaussian(Eigen::Index rows, Eigen::Index cols) {
    Mat<S> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = standard<S>();
    }
    return m;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

template <>
double Rng::standard<double>();
template <>
cplx Rng::standard<cplx>();

}  // namespace cpfit
