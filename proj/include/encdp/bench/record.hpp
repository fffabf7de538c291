#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "encdp/bench/workload.hpp"

namespace encdp::bench {

/// One cell of the experiment matrix. Throughput is in MB/s, MB = 10^6 bytes.
struct BenchRecord {
  Variant variant = Variant::kUntrusted;
  std::optional<CipherBackend> backend;
  std::uint64_t buffer_bytes = 0;
  unsigned threads = 1;
  unsigned reps = 0;
  double mean_mbps = 0;
  double stddev_mbps = 0;
  // Counters over the measurement windows only.
  std::uint64_t transitions = 0;
  std::uint64_t bytes_copied_in = 0;
  std::uint64_t evictions = 0;
  /// Non-empty when the cell failed; the numbers are then meaningless.
  std::string error;

  Workload workload() const { return workload_of(variant); }
  bool ok() const { return error.empty(); }
  CellSpec cell() const { return {variant, backend, buffer_bytes, threads}; }

  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

inline constexpr std::string_view kCsvUnitComment = "# throughput unit: MB/s, MB = 10^6 bytes";
inline constexpr std::string_view kCsvHeader =
    "workload,variant,backend,buffer_bytes,threads,reps,mean_MBps,stddev_MBps,transitions,bytes_copied_in,evictions";

/// Writes the unit comment and header on construction, then one flushed row
/// per record. A failed cell is written as a "# error: ..." comment followed
/// by its row with mean and stddev set to ERROR.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out);
  void write(const BenchRecord& record);

 private:
  std::ostream& out_;
};

/// Inverse of CsvWriter; doubles round-trip exactly. ParseError on anything
/// malformed, with the line number.
std::vector<BenchRecord> read_csv(std::istream& in);
std::vector<BenchRecord> read_csv_file(const std::filesystem::path& path);
void write_csv_file(const std::filesystem::path& path, const std::vector<BenchRecord>& records);

}  // namespace encdp::bench
