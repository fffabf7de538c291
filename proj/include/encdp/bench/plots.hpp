#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "encdp/bench/record.hpp"

namespace encdp::bench {

/// Writes SVG line charts into `outdir` (created if needed):
///   <workload>_threads<N>_vs_size.svg   one per (workload, threads), log2 x
///   <workload>_size<B>_vs_threads.svg   one per (workload, size)
/// with one polyline per variant/backend. Error rows are left out. Output
/// depends only on the records, so reruns are byte-identical.
std::vector<std::filesystem::path> emit_plots(const std::vector<BenchRecord>& records,
                                              const std::filesystem::path& outdir);

/// As above from a CSV file; ParseError if it is malformed.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& csv, const std::filesystem::path& outdir);

/// Compact size label: 4096 -> "4K", 1048576 -> "1M".
std::string size_label(std::uint64_t bytes);

}  // namespace encdp::bench
