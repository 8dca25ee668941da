#include "cpfit/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cpfit/errors.hpp"

namespace cpfit {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'P', 'T', 'N'};
constexpr std::size_t kHeaderBytes = 16;

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int k = 0; k < bytes; ++k) buf[k] = static_cast<char>((v >> (8 * k)) & 0xFFu);
  out.write(buf, bytes);
}

std::uint64_t get_le(std::istream& in, int bytes, const char* what) {
  unsigned char buf[8] = {};
  in.read(reinterpret_cast<char*>(buf), bytes);
  if (in.gcount() != bytes) throw FormatError(std::string("CPTN: truncated ") + what);
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  return v;
}

void put_double(std::ostream& out, double d) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &d, sizeof bits);
  put_le(out, bits, 8);
}

double get_double(std::istream& in) {
  const std::uint64_t bits = get_le(in, 8, "scalar data");
  double d = 0.0;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return in;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const std::string& suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

template <Scalar S>
void write_tensor(std::ostream& out, const Tensor<S>& t) {
  if (t.order() == 0 || t.order() > 255) throw DimensionError("CPTN supports orders 1..255");
  out.write(kMagic.data(), 4);
  put_le(out, kCptnVersion, 4);
  put_le(out, static_cast<std::uint64_t>(t.kind()), 1);
  put_le(out, t.order(), 1);
  put_le(out, 0, static_cast<int>(kHeaderBytes - 10));
  for (std::size_t d : t.dims()) put_le(out, d, 8);
  for (Eigen::Index k = 0; k < t.data().size(); ++k) {
    if constexpr (std::is_same_v<S, double>) {
      put_double(out, t.data()[k]);
    } else {
      put_double(out, t.data()[k].real());
      put_double(out, t.data()[k].imag());
    }
  }
  if (!out) throw std::runtime_error("CPTN: write failed");
}

template <Scalar S>
void write_tensor(const std::filesystem::path& path, const Tensor<S>& t) {
  std::ofstream out = open_out(path);
  write_tensor(out, t);
}

AnyTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kMagic) throw FormatError("CPTN: bad magic bytes");
  const auto version = get_le(in, 4, "header");
  if (version != kCptnVersion) throw FormatError("CPTN: unsupported version " + std::to_string(version));
  const auto kind = get_le(in, 1, "header");
  const auto order = get_le(in, 1, "header");
  get_le(in, static_cast<int>(kHeaderBytes - 10), "header");
  if (kind > 1) throw FormatError("CPTN: unknown scalar kind " + std::to_string(kind));
  if (order == 0) throw FormatError("CPTN: order must be at least 1");
  std::vector<std::size_t> dims;
  for (std::uint64_t n = 0; n < order; ++n) {
    const auto d = get_le(in, 8, "dims");
    if (d == 0) throw FormatError("CPTN: zero dimension");
    dims.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t volume = checked_volume(dims);
  if (kind == 0) {
    Vec<double> data(static_cast<Eigen::Index>(volume));
    for (std::size_t k = 0; k < volume; ++k) data[static_cast<Eigen::Index>(k)] = get_double(in);
    return RealTensor(std::move(dims), std::move(data));
  }
  Vec<cplx> data(static_cast<Eigen::Index>(volume));
  for (std::size_t k = 0; k < volume; ++k) {
    const double re = get_double(in);
    const double im = get_double(in);
    data[static_cast<Eigen::Index>(k)] = cplx(re, im);
  }
  return ComplexTensor(std::move(dims), std::move(data));
}

AnyTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return read_tensor(in);
}

template <Scalar S>
Tensor<S> read_tensor_as(const std::filesystem::path& path) {
  AnyTensor any = read_tensor(path);
  if (auto* t = std::get_if<Tensor<S>>(&any)) return std::move(*t);
  throw FormatError("'" + path.string() + "' holds " +
                    (std::holds_alternative<RealTensor>(any) ? "real" : "complex") +
                    " data; mixed scalar kinds are not converted");
}

template <Scalar S>
std::vector<std::filesystem::path> write_model(const std::filesystem::path& prefix, const KruskalModel<S>& model) {
  model.validate();
  std::vector<std::filesystem::path> written;
  for (std::size_t n = 0; n < model.order(); ++n) {
    const Mat<S>& a = model.factors[n];
    const auto path = with_suffix(prefix, ".A" + std::to_string(n + 1) + ".cptn");
    write_tensor(path, Tensor<S>({static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(a.cols())},
                                 Eigen::Map<const Vec<S>>(a.data(), a.size())));
    written.push_back(path);
  }
  const auto lambda_path = with_suffix(prefix, ".lambda.cptn");
  write_tensor(lambda_path, Tensor<S>({model.rank()}, model.effective_weights()));
  written.push_back(lambda_path);
  return written;
}

template <Scalar S>
KruskalModel<S> read_model(const std::filesystem::path& prefix) {
  KruskalModel<S> model;
  for (std::size_t n = 1;; ++n) {
    const auto path = with_suffix(prefix, ".A" + std::to_string(n) + ".cptn");
    if (!std::filesystem::exists(path)) break;
    const Tensor<S> t = read_tensor_as<S>(path);
    if (t.order() != 2) throw FormatError("'" + path.string() + "' is not a factor matrix");
    model.factors.push_back(Eigen::Map<const Mat<S>>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                                     static_cast<Eigen::Index>(t.dim(1))));
  }
  if (model.factors.empty()) throw FormatError("no factor files found for prefix '" + prefix.string() + "'");
  const auto lambda_path = with_suffix(prefix, ".lambda.cptn");
  if (std::filesystem::exists(lambda_path)) model.weights = read_tensor_as<S>(lambda_path).data();
  model.validate();
  return model;
}

ScalarKind model_kind(const std::filesystem::path& prefix) {
  const AnyTensor t = read_tensor(with_suffix(prefix, ".A1.cptn"));
  return std::holds_alternative<RealTensor>(t) ? ScalarKind::real : ScalarKind::complex;
}

void write_metadata(const std::filesystem::path& path, const Metadata& md) {
  std::ofstream out = open_out(path);
  for (const auto& [key, value] : md) {
    if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw FormatError("metadata key/value contains '=' or a newline: " + key);
    }
    out << key << '=' << value << '\n';
  }
}

Metadata read_metadata(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  Metadata md;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("metadata line without '=': " + line);
    md.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return md;
}

const std::string& metadata_value(const Metadata& md, const std::string& key) {
  for (const auto& [k, v] : md) {
    if (k == key) return v;
  }
  throw FormatError("metadata key '" + key + "' missing");
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string to_csv_row(const RunRecord& rec) {
  std::ostringstream os;
  os << rec.seed << ',' << format_double(rec.nu) << ',' << rec.rank << ',' << format_double(rec.snr_db) << ','
     << rec.algo << ',' << rec.iters << ',' << rec.accepted_iters << ',' << format_double(rec.time_ms) << ','
     << format_double(rec.final_relerr) << ',' << format_double(rec.medsae_first_db) << ','
     << format_double(rec.medsae_rest_db) << ',' << rec.stop_reason;
  return os.str();
}

void write_run_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << kRunRecordHeader << '\n';
  for (const auto& rec : records) out << to_csv_row(rec) << '\n';
}

#define CPFIT_INSTANTIATE(S)                                                                                         \
  template void write_tensor<S>(std::ostream&, const Tensor<S>&);                                                    \
  template void write_tensor<S>(const std::filesystem::path&, const Tensor<S>&);                                     \
  template Tensor<S> read_tensor_as<S>(const std::filesystem::path&);                                                \
  template std::vector<std::filesystem::path> write_model<S>(const std::filesystem::path&, const KruskalModel<S>&); \
  template KruskalModel<S> read_model<S>(const std::filesystem::path&);

CPFIT_INSTANTIATE(double)
CPFIT_INSTANTIATE(cplx)

#undef CPFIT_INSTANTIATE

}  // namespace cpfit
