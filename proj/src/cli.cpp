#include "cpfit/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include "cpfit/errors.hpp"

namespace cpfit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const std::string& suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

double parse_double(const std::string& text) {
  std::string t = text;
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }), t.end());
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

template <Scalar S>
void fill_record(RunRecord& rec, const FitResult<S>& res, const Tensor<S>& y, const KruskalModel<S>* truth,
                 ComponentAngles* angles) {
  rec.iters = res.trace.iters;
  rec.accepted_iters = res.trace.accepted_iters;
  rec.final_relerr = res.trace.relerr.empty() ? relative_error(y, res.model) : res.trace.relerr.back();
  rec.stop_reason = to_string(res.trace.stop);
  if (truth != nullptr && truth->rank() == res.model.rank()) {
    const ComponentAngles ca = component_angles(*truth, res.model);
    const MedsaeReport m = medsae(std::vector<ComponentAngles>{ca});
    rec.medsae_first_db = m.first_db;
    rec.medsae_rest_db = m.rest_db;
    if (angles != nullptr) *angles = ca;
  }
}

template <Scalar S>
GenOutputs gen_impl(const GenOptions& opts) {
  const CollinearProblem<S> prob = gen_collinear<S>(opts.spec);
  GenOutputs out;
  out.tensor = with_suffix(opts.prefix, ".cptn");
  write_tensor(out.tensor, prob.tensor);
  if (prob.noisy) {
    out.noisy = with_suffix(opts.prefix, ".noisy.cptn");
    write_tensor(*out.noisy, *prob.noisy);
    out.measured_snr_db = measured_snr_db(prob.tensor, *prob.noisy);
  }
  const auto truth_prefix = with_suffix(opts.prefix, ".truth");
  out.truth = write_model(truth_prefix, prob.truth);

  // paths are stored relative to the sidecar's directory
  Metadata md{
      {"kind", opts.complex ? "complex" : "real"},
      {"dims", join_sizes(opts.spec.dims)},
      {"R", std::to_string(opts.spec.rank)},
      {"nu", format_double(opts.spec.nu)},
      {"snr_db", format_double(opts.spec.snr_db.value_or(std::numeric_limits<double>::infinity()))},
      {"seed", std::to_string(opts.spec.seed)},
      {"tensor", out.tensor.filename().string()},
      {"truth_prefix", truth_prefix.filename().string()},
  };
  if (out.noisy) {
    md.emplace_back("noisy", out.noisy->filename().string());
    md.emplace_back("measured_snr_db", format_double(*out.measured_snr_db));
  }
  out.metadata = with_suffix(opts.prefix, ".meta");
  write_metadata(out.metadata, md);
  return out;
}

template <Scalar S>
RunRecord fit_impl(const Tensor<S>& y, const FitOptions& opts) {
  RunRecord rec;
  rec.seed = opts.cfg.seed;
  rec.rank = opts.cfg.rank;
  rec.algo = to_string(opts.cfg.algo);
  rec.nu = kNaN;
  std::optional<KruskalModel<S>> truth;
  if (opts.metadata) {
    const Metadata md = read_metadata(*opts.metadata);
    for (const auto& [k, v] : md) {
      if (k == "nu") rec.nu = parse_double(v);
      if (k == "snr_db") rec.snr_db = parse_double(v);
      if (k == "truth_prefix") truth = read_model<S>(opts.metadata->parent_path() / v);
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const FitResult<S> res = fit(y, opts.cfg);
  rec.time_ms = elapsed_ms(start);
  fill_record(rec, res, y, truth ? &*truth : nullptr, nullptr);
  write_model(opts.out_prefix, res.model);
  return rec;
}

struct CellKey {
  double nu;
  std::size_t rank;
  double snr;
};

struct CellOutput {
  std::vector<RunRecord> rows;
  std::vector<std::optional<ComponentAngles>> angles;
};

template <Scalar S>
CellOutput run_cell(const BenchOptions& opts, const CellKey& key, std::uint64_t seed) {
  CellOutput out;
  std::optional<CollinearProblem<S>> prob;
  try {
    CollinearSpec spec{std::vector<std::size_t>(opts.order, opts.size), key.rank, key.nu, key.snr, seed};
    prob = gen_collinear<S>(spec);
  } catch (const std::exception&) {
    // every row of this cell is reported as an error
  }
  for (Algo algo : opts.algos) {
    RunRecord rec;
    rec.seed = seed;
    rec.nu = key.nu;
    rec.rank = key.rank;
    rec.snr_db = key.snr;
    rec.algo = to_string(algo);
    std::optional<ComponentAngles> ca;
    if (prob) {
      FitConfig cfg = opts.cfg;
      cfg.algo = algo;
      cfg.rank = key.rank;
      cfg.seed = seed;
      const Tensor<S>& y = prob->noisy ? *prob->noisy : prob->tensor;
      try {
        const auto start = std::chrono::steady_clock::now();
        const FitResult<S> res = fit(y, cfg);
        rec.time_ms = elapsed_ms(start);
        ComponentAngles angles;
        fill_record(rec, res, y, &prob->truth, &angles);
        if (res.trace.stop != StopReason::error) ca = std::move(angles);
      } catch (const std::exception&) {
        rec.stop_reason = "error";
      }
    }
    out.rows.push_back(rec);
    out.angles.push_back(std::move(ca));
  }
  return out;
}

}  // namespace

GenOutputs cmd_gen(const GenOptions& opts) {
  return opts.complex ? gen_impl<cplx>(opts) : gen_impl<double>(opts);
}

RunRecord cmd_fit(const FitOptions& opts) {
  AnyTensor y = read_tensor(opts.input);
  const RunRecord rec = std::visit([&](const auto& t) { return fit_impl(t, opts); }, y);
  const auto csv_path = opts.csv.value_or(with_suffix(opts.out_prefix, ".csv"));
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + csv_path.string() + "' for writing");
  write_run_csv(out, {rec});
  return rec;
}

BenchResult cmd_bench(const BenchOptions& opts) {
  if (opts.algos.empty()) throw std::invalid_argument("bench: no algorithms given");
  std::vector<CellKey> keys;
  for (double nu : opts.nus) {
    for (std::size_t r : opts.ranks) {
      for (double snr : opts.snrs) keys.push_back({nu, r, snr});
    }
  }
  const std::size_t jobs = keys.size() * opts.seeds;
  std::vector<CellOutput> cells(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const CellKey& key = keys[j / opts.seeds];
      const std::uint64_t seed = opts.base_seed + j % opts.seeds;
      cells[j] = opts.complex ? run_cell<cplx>(opts, key, seed) : run_cell<double>(opts, key, seed);
    }
  };
  std::size_t threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(jobs, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  BenchResult res;
  for (const auto& c : cells) res.rows.insert(res.rows.end(), c.rows.begin(), c.rows.end());

  for (std::size_t k = 0; k < keys.size(); ++k) {
    for (std::size_t a = 0; a < opts.algos.size(); ++a) {
      BenchSummaryRow s;
      s.nu = keys[k].nu;
      s.rank = keys[k].rank;
      s.snr_db = keys[k].snr;
      s.algo = to_string(opts.algos[a]);
      std::vector<double> iters;
      std::vector<double> errs;
      std::vector<ComponentAngles> angles;
      for (std::size_t t = 0; t < opts.seeds; ++t) {
        const CellOutput& c = cells[k * opts.seeds + t];
        const RunRecord& r = c.rows[a];
        ++s.runs;
        if (r.stop_reason == "error") {
          ++s.errors;
          continue;
        }
        iters.push_back(static_cast<double>(r.iters));
        errs.push_back(r.final_relerr);
        if (c.angles[a]) angles.push_back(*c.angles[a]);
      }
      s.median_iters = median(iters);
      s.median_final_relerr = median(errs);
      if (angles.empty()) {
        s.medsae_first_db = s.medsae_rest_db = kNaN;
      } else {
        const MedsaeReport m = medsae(angles);
        s.medsae_first_db = m.first_db;
        s.medsae_rest_db = m.rest_db;
      }
      res.summary.push_back(s);
    }
  }
  return res;
}

void write_bench_summary(std::ostream& out, const std::vector<BenchSummaryRow>& rows) {
  out << kBenchSummaryHeader << '\n';
  for (const auto& s : rows) {
    out << format_double(s.nu) << ',' << s.rank << ',' << format_double(s.snr_db) << ',' << s.algo << ',' << s.runs
        << ',' << s.errors << ',' << format_double(s.median_iters) << ',' << format_double(s.median_final_relerr)
        << ',' << format_double(s.medsae_first_db) << ',' << format_double(s.medsae_rest_db) << '\n';
  }
}

std::vector<SpectrumRow> cmd_spectrum(const SpectrumOptions& opts) {
  std::vector<SpectrumRow> rows;
  for (double nu : opts.nus) {
    for (double snr : opts.snrs) rows.push_back({nu, snr, spectrum(opts.size, opts.rank, opts.order, nu, snr)});
  }
  return rows;
}

void print_spectrum(std::ostream& out, const SpectrumOptions& opts, const std::vector<SpectrumRow>& rows) {
  char line[256];
  std::snprintf(line, sizeof line, "collinear spectrum: I=%zu N=%zu R=%zu\n", opts.size, opts.order, opts.rank);
  out << line;
  std::snprintf(line, sizeof line, "%8s %8s %12s %12s %12s %12s %12s  %s\n", "nu", "snr_db", "lam_max", "lam_mid",
                "lam_min", "noise_floor", "norm2", "verdict");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%8.4g %8.4g %12.5e %12.5e %12.5e %12.5e %12.5e  %s\n", r.nu, r.snr_db,
                  r.report.lam_max, r.report.lam_mid, r.report.lam_min, r.report.noise_floor, r.report.norm2,
                  r.report.feasible ? "feasible" : "infeasible");
    out << line;
  }
}

void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumRow>& rows) {
  out << "nu,snr_db,x,y,lam_max,lam_mid,lam_min,sigma2,noise_floor,norm2,verdict\n";
  for (const auto& r : rows) {
    const SpectrumReport& s = r.report;
    out << format_double(r.nu) << ',' << format_double(r.snr_db) << ',' << format_double(s.x) << ','
        << format_double(s.y) << ',' << format_double(s.lam_max) << ',' << format_double(s.lam_mid) << ','
        << format_double(s.lam_min) << ',' << format_double(s.sigma2) << ',' << format_double(s.noise_floor) << ','
        << format_double(s.norm2) << ',' << (s.feasible ? "feasible" : "infeasible") << '\n';
  }
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_double_list(text)) {
    if (!(v >= 0) || v != std::floor(v) || !std::isfinite(v)) {
      throw std::invalid_argument("not a non-negative integer in '" + text + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace cpfit
