#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "encdp/bench/record.hpp"

namespace encdp::bench {

enum class CheckStatus { kPass, kFail, kSkipped };
std::string_view status_name(CheckStatus s);

struct AssertionResult {
  std::string name;
  CheckStatus status = CheckStatus::kSkipped;
  /// The cells the verdict was computed from.
  std::string cells;
  /// Distance from the threshold, positive on the passing side.
  double margin = 0;
  std::string detail;
};

struct ShapeReport {
  std::vector<AssertionResult> results;

  bool passed() const;
  const AssertionResult* find(std::string_view name) const;
  /// One line per assertion.
  std::string text() const;
};

struct ShapeCheckOptions {
  Workload workload = Workload::kAesGcm;
  /// Backend of the curves compared; must be unset for find_max.
  std::optional<CipherBackend> backend = CipherBackend::kAccelerated;
  /// Thread scaling is only asserted with at least four.
  unsigned physical_cores = 1;
  /// Assertion names to evaluate; empty means all of them.
  std::vector<std::string> only;
};

/// small_buffer_gap, large_buffer_convergence, epc_collapse, backend_gap,
/// thread_scaling, thread_plateau.
std::vector<std::string_view> shape_assertions();

/// Evaluates the curve-shape assertions over measured records (error rows
/// count as missing). IncompleteMatrix names the cells a selected assertion
/// needs but cannot find.
ShapeReport shape_check(const std::vector<BenchRecord>& records, const ShapeCheckOptions& options = {});

/// Physical cores of this host from sysfs topology; falls back to the
/// logical CPU count.
unsigned detect_physical_cores();

}  // namespace encdp::bench
