#pragma once

// Command implementations behind the cpfit executable. Argument parsing lives
// in tools/cpfit.cpp; everything here takes plain option structs so the
// commands can be driven from tests.
//
// File naming for a generated problem with prefix P:
//   P.cptn                clean tensor
//   P.noisy.cptn          noisy copy (only with a finite SNR)
//   P.truth.A<n>.cptn     truth factors, P.truth.lambda.cptn weights
//   P.meta                key=value sidecar

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cpfit/flm.hpp"
#include "cpfit/io.hpp"
#include "cpfit/synth.hpp"

namespace cpfit {

struct GenOptions {
  CollinearSpec spec;
  bool complex = false;
  std::filesystem::path prefix = "problem";
};

struct GenOutputs {
  std::filesystem::path tensor;
  std::optional<std::filesystem::path> noisy;
  std::vector<std::filesystem::path> truth;
  std::filesystem::path metadata;
  std::optional<double> measured_snr_db;
};

GenOutputs cmd_gen(const GenOptions& opts);

struct FitOptions {
  std::filesystem::path input;
  /// Sidecar written by gen; supplies nu, snr and the truth model for MedSAE.
  std::optional<std::filesystem::path> metadata;
  FitConfig cfg;
  std::filesystem::path out_prefix = "fit";
  /// Defaults to "<out_prefix>.csv".
  std::optional<std::filesystem::path> csv;
};

/// Fits the tensor, writes "<out_prefix>.A<n>.cptn" etc. and a one-row CSV.
/// Unknown files, kind mismatches and the dgn-oracle size guard throw.
RunRecord cmd_fit(const FitOptions& opts);

struct BenchOptions {
  std::size_t size = 20;
  std::size_t order = 3;
  std::vector<double> nus{0.5};
  std::vector<std::size_t> ranks{3};
  /// +inf for noise-free cells.
  std::vector<double> snrs{std::numeric_limits<double>::infinity()};
  std::size_t seeds = 10;
  std::uint64_t base_seed = 1;
  std::vector<Algo> algos{Algo::als_ls, Algo::flm_a};
  FitConfig cfg;  // algo, rank and seed are overwritten per row
  bool complex = false;
  /// 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

struct BenchSummaryRow {
  double nu = 0.0;
  std::size_t rank = 0;
  double snr_db = 0.0;
  std::string algo;
  std::size_t runs = 0;
  std::size_t errors = 0;
  double median_iters = 0.0;
  double median_final_relerr = 0.0;
  double medsae_first_db = 0.0;
  double medsae_rest_db = 0.0;
};

inline constexpr const char* kBenchSummaryHeader =
    "nu,R,snr_db,algo,runs,errors,median_iters,median_final_relerr,medsae_first_db,medsae_rest_db";

struct BenchResult {
  /// Cell-major (nu, R, snr, seed), then algo in the order given.
  std::vector<RunRecord> rows;
  std::vector<BenchSummaryRow> summary;
};

/// Trial s of a cell uses seed base_seed + s for both generation and fit.
/// A row whose fit throws is kept with stop_reason "error".
BenchResult cmd_bench(const BenchOptions& opts);

void write_bench_summary(std::ostream& out, const std::vector<BenchSummaryRow>& rows);

struct SpectrumOptions {
  std::size_t size = 100;
  std::size_t order = 3;
  std::size_t rank = 15;
  std::vector<double> nus{0.1};
  std::vector<double> snrs{20.0};
};

struct SpectrumRow {
  double nu = 0.0;
  double snr_db = 0.0;
  SpectrumReport report;
};

std::vector<SpectrumRow> cmd_spectrum(const SpectrumOptions& opts);
void print_spectrum(std::ostream& out, const SpectrumOptions& opts, const std::vector<SpectrumRow>& rows);
void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumRow>& rows);

/// Comma-separated list parsing for the CLI; "inf" is accepted for doubles.
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::size_t> parse_size_list(const std::string& text);

}  // namespace cpfit
