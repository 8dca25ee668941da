#pragma once

// CPTN binary tensors, key=value metadata sidecars and run-record CSV.
//
// CPTN layout (all integers little-endian):
//   0  "CPTN"
//   4  u32 version = 1
//   8  u8 scalar kind (0 real float64, 1 complex float64 as re, im)
//   9  u8 order N
//   10 zero padding to offset 16
//   16 N x u64 dims
//   .. J scalars in column-major order

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cpfit/kruskal.hpp"
#include "cpfit/tensor.hpp"

namespace cpfit {

inline constexpr std::uint32_t kCptnVersion = 1;

using AnyTensor = std::variant<RealTensor, ComplexTensor>;

template <Scalar S>
void write_tensor(std::ostream& out, const Tensor<S>& t);
template <Scalar S>
void write_tensor(const std::filesystem::path& path, const Tensor<S>& t);

/// Throws FormatError on a bad magic, version, kind, order or truncated data.
AnyTensor read_tensor(std::istream& in);
AnyTensor read_tensor(const std::filesystem::path& path);

/// Reads a tensor and insists on scalar kind S (no promotion between kinds).
template <Scalar S>
Tensor<S> read_tensor_as(const std::filesystem::path& path);

/// Factor files "<prefix>.A<n>.cptn" (n = 1..N, order-2 tensors) plus
/// "<prefix>.lambda.cptn" (order 1). Returns the written paths.
template <Scalar S>
std::vector<std::filesystem::path> write_model(const std::filesystem::path& prefix, const KruskalModel<S>& model);

template <Scalar S>
KruskalModel<S> read_model(const std::filesystem::path& prefix);

/// Scalar kind byte of the first factor file of a model.
ScalarKind model_kind(const std::filesystem::path& prefix);

using Metadata = std::vector<std::pair<std::string, std::string>>;

void write_metadata(const std::filesystem::path& path, const Metadata& md);
Metadata read_metadata(const std::filesystem::path& path);
/// Value for key, or throws FormatError when absent.
const std::string& metadata_value(const Metadata& md, const std::string& key);

/// Shortest round-trip decimal form; "inf", "-inf" and "nan" for specials.
std::string format_double(double v);

struct RunRecord {
  std::uint64_t seed = 0;
  double nu = 0.0;
  std::size_t rank = 0;
  double snr_db = std::numeric_limits<double>::infinity();
  std::string algo;
  std::size_t iters = 0;
  std::size_t accepted_iters = 0;
  double time_ms = 0.0;
  double final_relerr = std::numeric_limits<double>::quiet_NaN();
  double medsae_first_db = std::numeric_limits<double>::quiet_NaN();
  double medsae_rest_db = std::numeric_limits<double>::quiet_NaN();
  std::string stop_reason = "error";
};

inline constexpr const char* kRunRecordHeader =
    "seed,nu,R,snr_db,algo,iters,accepted_iters,time_ms,final_relerr,medsae_first_db,medsae_rest_db,stop_reason";

std::string to_csv_row(const RunRecord& rec);
/// Header plus one row per record, LF line endings.
void write_run_csv(std::ostream& out, const std::vector<RunRecord>& records);

}  // namespace cpfit
