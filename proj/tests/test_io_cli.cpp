#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cpfit/cli.hpp"
#include "cpfit/errors.hpp"
#include "cpfit/io.hpp"
#include "cpfit/verify.hpp"
#include "oracles.hpp"

using namespace cpfit;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("cpfit_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using IoFiles = TempDir;
using Cli = TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T read_le(const std::string& bytes, std::size_t offset) {
  T v{};
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

// drops the time_ms column
std::string strip_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k != 7) out += cells[k] + ",";
    }
    out += "\n";
  }
  return out;
}

std::string bench_csv(const BenchResult& r) {
  std::ostringstream out;
  write_run_csv(out, r.rows);
  return out.str();
}

}  // namespace

TEST(Io, CptnByteLayout) {
  const RealTensor t({2, 3}, Vec<double>::LinSpaced(6, 1.0, 6.0));
  std::ostringstream out;
  write_tensor(out, t);
  const std::string b = out.str();
  ASSERT_EQ(b.size(), 16u + 2 * 8 + 6 * 8);
  EXPECT_EQ(b.substr(0, 4), "CPTN");
  EXPECT_EQ(read_le<std::uint32_t>(b, 4), 1u);
  EXPECT_EQ(b[8], 0);
  EXPECT_EQ(b[9], 2);
  for (std::size_t k = 10; k < 16; ++k) EXPECT_EQ(b[k], 0);
  EXPECT_EQ(read_le<std::uint64_t>(b, 16), 2u);
  EXPECT_EQ(read_le<std::uint64_t>(b, 24), 3u);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(read_le<double>(b, 32 + 8 * k), 1.0 + static_cast<double>(k));

  const ComplexTensor c({1}, Vec<cplx>::Constant(1, cplx(2.5, -1.0)));
  std::ostringstream cout_;
  write_tensor(cout_, c);
  const std::string cb = cout_.str();
  EXPECT_EQ(cb[8], 1);
  EXPECT_EQ(read_le<double>(cb, 24), 2.5);
  EXPECT_EQ(read_le<double>(cb, 32), -1.0);
}

TEST(Io, CptnRoundTrip) {
  const auto r = oracle::random_tensor<double>({3, 1, 4, 2}, 1);
  const auto c = oracle::random_tensor<cplx>({5, 2}, 2);
  std::stringstream sr, sc;
  write_tensor(sr, r);
  write_tensor(sc, c);
  const AnyTensor ar = read_tensor(sr), ac = read_tensor(sc);
  ASSERT_TRUE(std::holds_alternative<RealTensor>(ar));
  ASSERT_TRUE(std::holds_alternative<ComplexTensor>(ac));
  EXPECT_EQ(std::get<RealTensor>(ar).dims(), r.dims());
  EXPECT_EQ(std::get<RealTensor>(ar).data(), r.data());
  EXPECT_EQ(std::get<ComplexTensor>(ac).data(), c.data());
}

TEST(Io, CptnRejectsMalformedInput) {
  const RealTensor t({2, 2}, Vec<double>::Ones(4));
  std::ostringstream out;
  write_tensor(out, t);
  const std::string good = out.str();
  auto expect_bad = [](std::string bytes) {
    std::istringstream in(bytes);
    EXPECT_THROW(read_tensor(in), FormatError);
  };
  std::string b = good;
  b[0] = 'X';
  expect_bad(b);
  b = good;
  b[4] = 2;
  expect_bad(b);
  b = good;
  b[8] = 7;
  expect_bad(b);
  b = good;
  b[9] = 0;
  expect_bad(b);
  b = good;
  b[16] = 0;
  expect_bad(b);
  expect_bad(good.substr(0, good.size() - 3));
  expect_bad(good.substr(0, 20));
  expect_bad("");
}

TEST_F(IoFiles, KindsAreNotPromoted) {
  const auto c = oracle::random_tensor<cplx>({2, 2}, 3);
  write_tensor(dir_ / "c.cptn", c);
  EXPECT_THROW(read_tensor_as<double>(dir_ / "c.cptn"), FormatError);
  EXPECT_EQ(read_tensor_as<cplx>(dir_ / "c.cptn").data(), c.data());
  EXPECT_ANY_THROW(read_tensor(dir_ / "missing.cptn"));
}

TEST_F(IoFiles, ModelRoundTrip) {
  KruskalModel<cplx> m{oracle::random_factors<cplx>({3, 4, 5}, 2, 4), Vec<cplx>::Constant(2, cplx(1, 2))};
  const auto paths = write_model(dir_ / "m", m);
  EXPECT_EQ(paths.size(), 4u);
  EXPECT_TRUE(fs::exists(dir_ / "m.A1.cptn"));
  EXPECT_TRUE(fs::exists(dir_ / "m.A3.cptn"));
  EXPECT_TRUE(fs::exists(dir_ / "m.lambda.cptn"));
  const KruskalModel<cplx> back = read_model<cplx>(dir_ / "m");
  ASSERT_EQ(back.factors.size(), 3u);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(back.factors[n], m.factors[n]);
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(model_kind(dir_ / "m"), ScalarKind::complex);
  EXPECT_THROW(read_model<double>(dir_ / "m"), FormatError);
  EXPECT_THROW(read_model<double>(dir_ / "none"), FormatError);
}

TEST_F(IoFiles, Metadata) {
  const Metadata md{{"kind", "real"}, {"dims", "3,4,5"}, {"nu", "0.5"}};
  write_metadata(dir_ / "x.meta", md);
  EXPECT_EQ(slurp(dir_ / "x.meta"), "kind=real\ndims=3,4,5\nnu=0.5\n");
  const Metadata back = read_metadata(dir_ / "x.meta");
  EXPECT_EQ(back, md);
  EXPECT_EQ(metadata_value(back, "dims"), "3,4,5");
  EXPECT_THROW(metadata_value(back, "seed"), FormatError);
  EXPECT_THROW(write_metadata(dir_ / "y.meta", Metadata{{"a=b", "c"}}), FormatError);
}

TEST(Io, CsvFormat) {
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);

  RunRecord rec;
  rec.seed = 7;
  rec.nu = 0.5;
  rec.rank = 3;
  rec.snr_db = 30;
  rec.algo = "flm-a";
  rec.iters = 12;
  rec.accepted_iters = 10;
  rec.time_ms = 1.5;
  rec.final_relerr = 1e-9;
  rec.medsae_first_db = -40;
  rec.stop_reason = "tol";
  EXPECT_EQ(to_csv_row(rec), "7,0.5,3,30,flm-a,12,10,1.5,1e-09,-40,nan,tol");
  std::ostringstream out;
  write_run_csv(out, {rec, rec});
  const std::string s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), kRunRecordHeader);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
  EXPECT_EQ(s.find('\r'), std::string::npos);
}

TEST_F(Cli, GenIsDeterministic) {
  GenOptions g;
  g.spec = CollinearSpec{{20, 20, 20}, 3, 0.5, std::nullopt, 7};
  g.prefix = dir_ / "a";
  const GenOutputs a = cmd_gen(g);
  g.prefix = dir_ / "b";
  const GenOutputs b = cmd_gen(g);
  EXPECT_EQ(slurp(a.tensor), slurp(b.tensor));
  ASSERT_EQ(a.truth.size(), b.truth.size());
  for (std::size_t k = 0; k < a.truth.size(); ++k) EXPECT_EQ(slurp(a.truth[k]), slurp(b.truth[k]));
  EXPECT_FALSE(a.noisy.has_value());
  const Metadata md = read_metadata(a.metadata);
  EXPECT_EQ(metadata_value(md, "dims"), "20,20,20");
  EXPECT_EQ(metadata_value(md, "R"), "3");
  EXPECT_EQ(metadata_value(md, "seed"), "7");
  EXPECT_EQ(metadata_value(md, "nu"), "0.5");
  EXPECT_EQ(std::get<RealTensor>(read_tensor(a.tensor)).data(),
            gen_collinear<double>(g.spec).tensor.data());
}

TEST_F(Cli, GenWithNoiseAndComplex) {
  GenOptions g;
  g.spec = CollinearSpec{{20, 20, 20}, 3, 0.5, 30.0, 8};
  g.complex = true;
  g.prefix = dir_ / "p";
  const GenOutputs out = cmd_gen(g);
  ASSERT_TRUE(out.noisy.has_value());
  ASSERT_TRUE(out.measured_snr_db.has_value());
  EXPECT_NEAR(*out.measured_snr_db, 30.0, 0.3);
  EXPECT_EQ(slurp(out.tensor)[8], 1);
  const auto clean = read_tensor_as<cplx>(out.tensor);
  const auto noisy = read_tensor_as<cplx>(*out.noisy);
  EXPECT_NEAR(measured_snr_db(clean, noisy), 30.0, 0.3);
}

TEST_F(Cli, FitWritesModelAndRecord) {
  GenOptions g;
  g.spec = CollinearSpec{{8, 8, 8}, 2, 0.5, std::nullopt, 9};
  g.prefix = dir_ / "p";
  const GenOutputs gen = cmd_gen(g);
  std::vector<double> finals;
  for (Algo algo : {Algo::flm_a, Algo::flm_b, Algo::als_ls, Algo::dgn_oracle}) {
    FitOptions f;
    f.input = gen.tensor;
    f.metadata = gen.metadata;
    f.cfg.algo = algo;
    f.cfg.rank = 2;
    f.cfg.tol = 1e-12;
    f.cfg.max_iters = 2000;
    f.out_prefix = dir_ / ("fit_" + to_string(algo));
    const RunRecord rec = cmd_fit(f);
    EXPECT_LT(rec.final_relerr, 1e-8) << to_string(algo);
    EXPECT_EQ(rec.stop_reason, "tol") << to_string(algo);
    EXPECT_EQ(rec.algo, to_string(algo));
    EXPECT_EQ(rec.nu, 0.5);
    EXPECT_GE(rec.iters, rec.accepted_iters);
    EXPECT_LT(rec.medsae_first_db, -60.0);
    EXPECT_TRUE(fs::exists(f.out_prefix.string() + ".A3.cptn"));
    const std::string csv = slurp(f.out_prefix.string() + ".csv");
    EXPECT_EQ(csv, std::string(kRunRecordHeader) + "\n" + to_csv_row(rec) + "\n");
    const auto model = read_model<double>(f.out_prefix);
    EXPECT_NEAR(relative_error(read_tensor_as<double>(gen.tensor), model), rec.final_relerr, 1e-12);
    finals.push_back(rec.final_relerr);
  }
  EXPECT_NEAR(finals[0], finals[1], 1e-9);
}

TEST_F(Cli, FitErrors) {
  const RealTensor big(std::vector<std::size_t>{100, 100, 100}, Vec<double>::Ones(1'000'000));
  write_tensor(dir_ / "big.cptn", big);
  FitOptions f;
  f.input = dir_ / "big.cptn";
  f.cfg.algo = Algo::dgn_oracle;
  f.cfg.rank = 60;
  f.out_prefix = dir_ / "out";
  EXPECT_THROW(cmd_fit(f), SizeGuardError);
  f.input = dir_ / "absent.cptn";
  EXPECT_ANY_THROW(cmd_fit(f));
  EXPECT_THROW(parse_algo("lm"), std::invalid_argument);
}

TEST(CliBench, RowCountSummaryAndDeterminism) {
  BenchOptions b;
  b.nus = {0.1, 0.9};
  b.ranks = {3};
  b.seeds = 10;
  b.cfg.max_iters = 30;
  b.threads = 2;
  const BenchResult r = cmd_bench(b);
  ASSERT_EQ(r.rows.size(), 40u);
  ASSERT_EQ(r.summary.size(), 4u);
  EXPECT_EQ(r.rows[0].algo, "als-ls");
  EXPECT_EQ(r.rows[1].algo, "flm-a");
  EXPECT_EQ(r.rows[0].seed, 1u);
  EXPECT_EQ(r.rows[2].seed, 2u);
  EXPECT_EQ(r.rows[20].nu, 0.9);
  for (const auto& s : r.summary) {
    EXPECT_EQ(s.runs, 10u);
    EXPECT_EQ(s.errors, 0u);
  }
  std::ostringstream sum;
  write_bench_summary(sum, r.summary);
  EXPECT_EQ(sum.str().substr(0, sum.str().find('\n')), kBenchSummaryHeader);

  b.threads = 1;
  const BenchResult again = cmd_bench(b);
  EXPECT_EQ(strip_time(bench_csv(again)), strip_time(bench_csv(r)));
}

TEST(CliSpectrum, PassthroughAndVerdicts) {
  SpectrumOptions o;
  o.snrs = {20.0, std::numeric_limits<double>::infinity()};
  const auto rows = cmd_spectrum(o);
  ASSERT_EQ(rows.size(), 2u);
  const SpectrumReport ref = spectrum(100, 15, 3, 0.1, 20.0);
  EXPECT_EQ(rows[0].report.lam_min, ref.lam_min);
  EXPECT_EQ(rows[0].report.noise_floor, ref.noise_floor);
  EXPECT_FALSE(rows[0].report.feasible);
  EXPECT_EQ(rows[1].report.noise_floor, 0.0);
  EXPECT_TRUE(rows[1].report.feasible);
  std::ostringstream text;
  print_spectrum(text, o, rows);
  EXPECT_NE(text.str().find("infeasible"), std::string::npos);
  o.rank = 1;
  EXPECT_THROW(cmd_spectrum(o), DimensionError);
}

TEST(CliParse, Lists) {
  EXPECT_EQ(parse_double_list("0.1,0.5,inf"),
            (std::vector<double>{0.1, 0.5, std::numeric_limits<double>::infinity()}));
  EXPECT_EQ(parse_size_list("3,15"), (std::vector<std::size_t>{3, 15}));
  EXPECT_THROW(parse_double_list("0.1,x"), std::invalid_argument);
  EXPECT_THROW(parse_size_list("-2"), std::invalid_argument);
  EXPECT_THROW(parse_size_list(""), std::invalid_argument);
}

TEST(Verify, DefaultRunPasses) {
  const VerifyReport rep = run_verify(VerifyOptions{});
  EXPECT_TRUE(rep.all_pass());
  for (const auto& c : rep.checks) {
    EXPECT_GT(c.cases, 0u) << c.name;
    EXPECT_LE(c.threshold, 1e-8) << c.name;
  }
  std::ostringstream out;
  print_report(out, rep);
  EXPECT_NE(out.str().find("PASS"), std::string::npos);
}

TEST(Verify, PerturbedRunFailsEveryCheck) {
  VerifyOptions o;
  o.perturb = true;
  const VerifyReport rep = run_verify(o);
  EXPECT_FALSE(rep.all_pass());
  for (const auto& c : rep.checks) EXPECT_FALSE(c.pass()) << c.name;
}
