#include "encdp/bench/matrix.hpp"

#include <algorithm>

#include "encdp/error.hpp"

namespace encdp::bench {

void MatrixConfig::validate() const {
  if (sizes.empty()) raise(Errc::kInvalidArgument, "no buffer sizes");
  if (std::adjacent_find(sizes.begin(), sizes.end(), std::greater_equal<>()) != sizes.end()) {
    raise(Errc::kInvalidArgument, "buffer sizes must be strictly ascending");
  }
  if (threads.empty() || std::find(threads.begin(), threads.end(), 0u) != threads.end()) {
    raise(Errc::kInvalidArgument, "thread counts must be positive");
  }
  if (workloads.empty()) raise(Errc::kInvalidArgument, "no workloads");
  for (Variant v : variants) {
    if (std::find(workloads.begin(), workloads.end(), workload_of(v)) == workloads.end()) {
      raise(Errc::kInvalidArgument, "variant " + std::string(variant_name(v)) + " is not in a selected workload");
    }
  }
  if (std::find(workloads.begin(), workloads.end(), Workload::kAesGcm) != workloads.end() && backends.empty()) {
    raise(Errc::kInvalidArgument, "AES-GCM needs at least one backend");
  }
  harness.validate();
}

MatrixConfig default_matrix() {
  MatrixConfig c;
  for (std::size_t s = std::size_t{4} << 10; s <= std::size_t{256} << 20; s *= 2) c.sizes.push_back(s);
  return c;
}

std::vector<CellSpec> expand(const MatrixConfig& config) {
  config.validate();
  std::vector<CellSpec> cells;
  for (Workload w : config.workloads) {
    std::vector<Variant> variants;
    for (Variant v : variants_of(w)) {
      if (config.variants.empty() ||
          std::find(config.variants.begin(), config.variants.end(), v) != config.variants.end()) {
        variants.push_back(v);
      }
    }
    std::vector<std::optional<CipherBackend>> backends;
    if (w == Workload::kAesGcm) {
      backends.assign(config.backends.begin(), config.backends.end());
    } else {
      backends.push_back(std::nullopt);
    }
    // Cells that get compared (variants at one size, thread counts at one
    // size) run close together, so slow drift in host speed does not show up
    // as a gap between them.
    for (const auto& b : backends) {
      for (std::size_t s : config.sizes) {
        for (unsigned t : config.threads) {
          for (Variant v : variants) cells.push_back({v, b, s, t});
        }
      }
    }
  }
  return cells;
}

std::vector<BenchRecord> run_matrix(const MatrixConfig& config, CsvWriter* csv,
                                    const std::function<void(const CellReport&)>& on_cell) {
  std::vector<BenchRecord> records;
  for (const CellSpec& cell : expand(config)) {
    CellReport report{cell, {}, std::nullopt};
    try {
      CellResult r = run_cell(cell, config.harness);
      report.record = std::move(r.record);
      report.diagnostics = std::move(r.diagnostics);
    } catch (const std::exception& e) {
      report.record = BenchRecord{.variant = cell.variant,
                                  .backend = cell.backend,
                                  .buffer_bytes = cell.buffer_bytes,
                                  .threads = cell.threads,
                                  .reps = config.harness.reps,
                                  .error = e.what()};
    }
    if (csv != nullptr) csv->write(report.record);
    if (on_cell) on_cell(report);
    records.push_back(report.record);
  }
  return records;
}

}  // namespace encdp::bench
