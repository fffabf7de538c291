#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "encdp/bench/harness.hpp"
#include "encdp/bench/record.hpp"

namespace encdp::bench {

struct MatrixConfig {
  std::vector<Workload> workloads{Workload::kFindMax, Workload::kAesGcm};
  /// Empty selects every variant of the chosen workloads.
  std::vector<Variant> variants;
  /// Applies to AES-GCM only.
  std::vector<CipherBackend> backends{CipherBackend::kAccelerated, CipherBackend::kPortable};
  std::vector<std::size_t> sizes;
  std::vector<unsigned> threads{1, 2, 4, 8, 16};
  HarnessConfig harness;

  /// InvalidArgument unless sizes are non-empty and strictly ascending, every
  /// thread count is positive, each variant belongs to a chosen workload and
  /// the harness config is valid.
  void validate() const;
};

/// 4 KiB to 256 MiB in powers of two, threads 1..16, 30 reps, both workloads.
MatrixConfig default_matrix();

/// The cross product, in run order: per workload, backend, size and thread
/// count, every selected variant in turn.
std::vector<CellSpec> expand(const MatrixConfig& config);

struct CellReport {
  CellSpec cell;
  BenchRecord record;
  std::optional<CellDiagnostics> diagnostics;  // absent for failed cells
};

/// Runs every cell. A failing cell becomes an error record and the matrix
/// carries on. Each record is written to `csv` (if given) as soon as its
/// cell finishes.
std::vector<BenchRecord> run_matrix(const MatrixConfig& config, CsvWriter* csv = nullptr,
                                    const std::function<void(const CellReport&)>& on_cell = {});

}  // namespace encdp::bench
