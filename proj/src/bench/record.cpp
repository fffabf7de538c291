#include "encdp/bench/record.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

constexpr std::string_view kErrorPrefix = "# error: ";
constexpr std::string_view kErrorValue = "ERROR";
constexpr std::size_t kColumns = 11;

std::string format_double(double v) {
  std::array<char, 64> buf;
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

std::string one_line(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return out;
}

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  raise(Errc::kParseError, "line " + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(std::string_view field, std::size_t line, std::string_view column) {
  T v{};
  const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || r.ec != std::errc{} || r.ptr != field.data() + field.size()) {
    parse_error(line, "bad " + std::string(column) + " '" + std::string(field) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view row) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = row.find(',', start);
    fields.push_back(row.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

CsvWriter::CsvWriter(std::ostream& out) : out_(out) {
  out_ << kCsvUnitComment << '\n' << kCsvHeader << '\n';
  out_.flush();
}

void CsvWriter::write(const BenchRecord& r) {
  if (!r.ok()) out_ << kErrorPrefix << one_line(r.error) << '\n';
  out_ << workload_name(r.workload()) << ',' << variant_name(r.variant) << ',' << backend_label(r.backend) << ','
       << r.buffer_bytes << ',' << r.threads << ',' << r.reps << ',';
  if (r.ok()) {
    out_ << format_double(r.mean_mbps) << ',' << format_double(r.stddev_mbps);
  } else {
    out_ << kErrorValue << ',' << kErrorValue;
  }
  out_ << ',' << r.transitions << ',' << r.bytes_copied_in << ',' << r.evictions << '\n';
  out_.flush();
}

std::vector<BenchRecord> read_csv(std::istream& in) {
  std::vector<BenchRecord> records;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::optional<std::string> pending_error;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.starts_with(kErrorPrefix)) pending_error = line.substr(kErrorPrefix.size());
      continue;
    }
    if (!header_seen) {
      if (line != kCsvHeader) parse_error(lineno, "expected header '" + std::string(kCsvHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != kColumns) {
      parse_error(lineno, "expected " + std::to_string(kColumns) + " fields, got " + std::to_string(f.size()));
    }
    BenchRecord r;
    const auto workload = parse_workload(f[0]);
    if (!workload) parse_error(lineno, "unknown workload '" + std::string(f[0]) + "'");
    const auto variant = parse_variant(f[1]);
    if (!variant || workload_of(*variant) != *workload) {
      parse_error(lineno, "unknown variant '" + std::string(f[1]) + "' for " + std::string(f[0]));
    }
    r.variant = *variant;
    if (*workload == Workload::kFindMax) {
      if (f[2] != "none") parse_error(lineno, "find_max rows take backend 'none'");
    } else {
      r.backend = parse_backend(f[2]);
      if (!r.backend) parse_error(lineno, "unknown backend '" + std::string(f[2]) + "'");
    }
    r.buffer_bytes = parse_number<std::uint64_t>(f[3], lineno, "buffer_bytes");
    r.threads = parse_number<unsigned>(f[4], lineno, "threads");
    r.reps = parse_number<unsigned>(f[5], lineno, "reps");
    if (f[6] == kErrorValue) {
      if (f[7] != kErrorValue) parse_error(lineno, "error rows carry ERROR in both throughput columns");
      r.error = pending_error.value_or("unspecified");
    } else {
      r.mean_mbps = parse_number<double>(f[6], lineno, "mean_MBps");
      r.stddev_mbps = parse_number<double>(f[7], lineno, "stddev_MBps");
    }
    pending_error.reset();
    r.transitions = parse_number<std::uint64_t>(f[8], lineno, "transitions");
    r.bytes_copied_in = parse_number<std::uint64_t>(f[9], lineno, "bytes_copied_in");
    r.evictions = parse_number<std::uint64_t>(f[10], lineno, "evictions");
    records.push_back(std::move(r));
  }
  if (!header_seen) parse_error(lineno, "missing header");
  return records;
}

std::vector<BenchRecord> read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::kParseError, "cannot open " + path.string());
  return read_csv(in);
}

void write_csv_file(const std::filesystem::path& path, const std::vector<BenchRecord>& records) {
  std::ofstream out(path);
  if (!out) raise(Errc::kInvalidArgument, "cannot write " + path.string());
  CsvWriter w(out);
  for (const BenchRecord& r : records) w.write(r);
}

}  // namespace encdp::bench
