#include "encdp/bench/shape_check.hpp"

#include <sched.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

constexpr std::size_t kKiB = 1024;
constexpr std::size_t kMiB = kKiB * 1024;

constexpr std::size_t kSmallSize = 4 * kKiB;
constexpr double kSmallGapMax = 0.6;
constexpr std::size_t kConvergenceFrom = 256 * kKiB;
constexpr double kConvergenceMin = 0.85;
constexpr std::size_t kInsideEpc = 8 * kMiB;
constexpr std::size_t kBeyondEpc = 256 * kMiB;
constexpr double kCollapseMax = 0.5;
constexpr std::size_t kBackendGapSize = 1 * kMiB;
constexpr double kBackendGapMax = 0.7;
constexpr std::size_t kScalingSize = 256 * kKiB;
constexpr unsigned kScalingThreads = 4;
constexpr double kScalingMin = 2.8;
constexpr double kPlateauMax = 1.15;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string cell_name(const CellSpec& c) {
  std::ostringstream os;
  os << workload_name(c.workload()) << '/' << variant_name(c.variant) << '/' << backend_label(c.backend) << '@'
     << c.buffer_bytes << "B x" << c.threads;
  return os.str();
}

class Cells {
 public:
  using Key = std::tuple<Variant, std::optional<CipherBackend>, std::uint64_t, unsigned>;

  explicit Cells(const std::vector<BenchRecord>& records) {
    for (const BenchRecord& r : records) {
      if (r.ok()) by_cell_[{r.variant, r.backend, r.buffer_bytes, r.threads}] = &r;
    }
  }

  /// Throughput of a cell, recording it as missing when absent.
  std::optional<double> get(const CellSpec& c) {
    auto it = by_cell_.find({c.variant, c.backend, c.buffer_bytes, c.threads});
    if (it == by_cell_.end()) {
      missing_.insert(cell_name(c));
      return std::nullopt;
    }
    return it->second->mean_mbps;
  }

  bool has(const CellSpec& c) const { return by_cell_.contains({c.variant, c.backend, c.buffer_bytes, c.threads}); }

  std::vector<std::uint64_t> sizes(Variant v, std::optional<CipherBackend> b, unsigned threads) const {
    std::vector<std::uint64_t> out;
    for (const auto& [k, r] : by_cell_) {
      if (std::get<0>(k) == v && std::get<1>(k) == b && std::get<3>(k) == threads) out.push_back(std::get<2>(k));
    }
    return out;
  }

  std::vector<unsigned> threads(Variant v, std::optional<CipherBackend> b, std::uint64_t size) const {
    std::vector<unsigned> out;
    for (const auto& [k, r] : by_cell_) {
      if (std::get<0>(k) == v && std::get<1>(k) == b && std::get<2>(k) == size) out.push_back(std::get<3>(k));
    }
    return out;
  }

  std::vector<const BenchRecord*> all_at(Workload w, std::optional<CipherBackend> b, std::uint64_t size) const {
    std::vector<const BenchRecord*> out;
    for (const auto& [k, r] : by_cell_) {
      if (workload_of(std::get<0>(k)) == w && std::get<1>(k) == b && std::get<2>(k) == size) out.push_back(r);
    }
    return out;
  }

  void note_missing(std::string what) { missing_.insert(std::move(what)); }
  const std::set<std::string>& missing() const { return missing_; }

 private:
  std::map<Key, const BenchRecord*> by_cell_;
  std::set<std::string> missing_;
};

AssertionResult verdict(std::string name, bool pass, double margin, std::string cells, std::string detail) {
  return {std::move(name), pass ? CheckStatus::kPass : CheckStatus::kFail, std::move(cells), margin,
          std::move(detail)};
}

AssertionResult skipped(std::string name, std::string detail) {
  return {std::move(name), CheckStatus::kSkipped, "", 0, std::move(detail)};
}

struct Context {
  Cells& cells;
  const ShapeCheckOptions& opt;
  Variant baseline;
  Variant in_place;
  Variant enclave;
};

std::optional<AssertionResult> small_buffer_gap(Context& c) {
  const CellSpec t{c.in_place, c.opt.backend, kSmallSize, 1};
  const CellSpec u{c.baseline, c.opt.backend, kSmallSize, 1};
  const auto tv = c.cells.get(t);
  const auto uv = c.cells.get(u);
  if (!tv || !uv) return std::nullopt;
  const double ratio = *tv / *uv;
  return verdict("small_buffer_gap", ratio <= kSmallGapMax, kSmallGapMax - ratio, cell_name(t) + " / " + cell_name(u),
                 "ratio " + fmt(ratio) + " (must be <= " + fmt(kSmallGapMax) + ")");
}

std::optional<AssertionResult> large_buffer_convergence(Context& c) {
  auto sizes = c.cells.sizes(c.in_place, c.opt.backend, 1);
  for (auto s : c.cells.sizes(c.baseline, c.opt.backend, 1)) sizes.push_back(s);
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  std::erase_if(sizes, [](std::uint64_t s) { return s < kConvergenceFrom; });
  if (sizes.empty()) {
    c.cells.note_missing("any single-thread " + std::string(variant_name(c.in_place)) + " cell >= " +
                         std::to_string(kConvergenceFrom) + " B");
    return std::nullopt;
  }
  double worst = 1e300;
  std::string worst_cells;
  bool complete = true;
  for (auto s : sizes) {
    const CellSpec t{c.in_place, c.opt.backend, s, 1};
    const CellSpec u{c.baseline, c.opt.backend, s, 1};
    const auto tv = c.cells.get(t);
    const auto uv = c.cells.get(u);
    if (!tv || !uv) {
      complete = false;
      continue;
    }
    const double ratio = *tv / *uv;
    if (ratio < worst) {
      worst = ratio;
      worst_cells = cell_name(t) + " / " + cell_name(u);
    }
  }
  if (!complete) return std::nullopt;
  return verdict("large_buffer_convergence", worst >= kConvergenceMin, worst - kConvergenceMin, worst_cells,
                 "lowest ratio over " + std::to_string(sizes.size()) + " sizes " + fmt(worst) + " (must be >= " +
                     fmt(kConvergenceMin) + ")");
}

std::optional<AssertionResult> epc_collapse(Context& c) {
  const CellSpec big{c.enclave, c.opt.backend, kBeyondEpc, 1};
  const CellSpec small{c.enclave, c.opt.backend, kInsideEpc, 1};
  const auto bv = c.cells.get(big);
  const auto sv = c.cells.get(small);
  if (!bv || !sv) return std::nullopt;
  const double ratio = *bv / *sv;
  return verdict("epc_collapse", ratio <= kCollapseMax, kCollapseMax - ratio, cell_name(big) + " / " + cell_name(small),
                 "ratio " + fmt(ratio) + " (must be <= " + fmt(kCollapseMax) + ")");
}

std::optional<AssertionResult> backend_gap(Context& c) {
  if (c.opt.workload != Workload::kAesGcm) return skipped("backend_gap", "only AES-GCM has backends");
  const auto peak = [&](CipherBackend b) -> std::optional<std::pair<double, std::string>> {
    const auto rows = c.cells.all_at(Workload::kAesGcm, b, kBackendGapSize);
    if (rows.empty()) {
      c.cells.note_missing("any aesgcm/" + std::string(backend_name(b)) + " cell at " +
                           std::to_string(kBackendGapSize) + " B");
      return std::nullopt;
    }
    const auto* best = *std::max_element(rows.begin(), rows.end(), [](auto* a, auto* b2) {
      return a->mean_mbps < b2->mean_mbps;
    });
    return std::pair{best->mean_mbps, cell_name(best->cell())};
  };
  const auto p = peak(CipherBackend::kPortable);
  const auto a = peak(CipherBackend::kAccelerated);
  if (!p || !a) return std::nullopt;
  const double ratio = p->first / a->first;
  return verdict("backend_gap", ratio <= kBackendGapMax, kBackendGapMax - ratio, p->second + " / " + a->second,
                 "peak ratio " + fmt(ratio) + " (must be <= " + fmt(kBackendGapMax) + ")");
}

std::optional<AssertionResult> thread_scaling(Context& c) {
  if (c.opt.physical_cores < kScalingThreads) {
    return skipped("thread_scaling", "needs >= " + std::to_string(kScalingThreads) + " physical cores, host has " +
                                         std::to_string(c.opt.physical_cores));
  }
  const CellSpec four{c.baseline, c.opt.backend, kScalingSize, kScalingThreads};
  const CellSpec one{c.baseline, c.opt.backend, kScalingSize, 1};
  const auto fv = c.cells.get(four);
  const auto ov = c.cells.get(one);
  if (!fv || !ov) return std::nullopt;
  const double ratio = *fv / *ov;
  return verdict("thread_scaling", ratio >= kScalingMin, ratio - kScalingMin, cell_name(four) + " / " + cell_name(one),
                 "speedup " + fmt(ratio) + " (must be >= " + fmt(kScalingMin) + ")");
}

std::optional<AssertionResult> thread_plateau(Context& c) {
  const unsigned cores = c.opt.physical_cores;
  auto counts = c.cells.threads(c.baseline, c.opt.backend, kScalingSize);
  std::vector<unsigned> above;
  std::optional<unsigned> ref;
  for (unsigned t : counts) {
    if (t > cores) above.push_back(t);
    else if (!ref || t > *ref) ref = t;
  }
  if (above.empty()) {
    return skipped("thread_plateau", "no thread count above the " + std::to_string(cores) + " physical cores");
  }
  if (!ref) {
    c.cells.note_missing(cell_name({c.baseline, c.opt.backend, kScalingSize, cores}));
    return std::nullopt;
  }
  const CellSpec at_cores{c.baseline, c.opt.backend, kScalingSize, *ref};
  const double base = *c.cells.get(at_cores);
  double worst = 0;
  std::string worst_cell;
  for (unsigned t : above) {
    const CellSpec s{c.baseline, c.opt.backend, kScalingSize, t};
    const double ratio = *c.cells.get(s) / base;
    if (ratio > worst) {
      worst = ratio;
      worst_cell = cell_name(s);
    }
  }
  return verdict("thread_plateau", worst <= kPlateauMax, kPlateauMax - worst, worst_cell + " / " + cell_name(at_cores),
                 "largest gain past the core count " + fmt(worst) + "x (must be <= " + fmt(kPlateauMax) + "x)");
}

}  // namespace

std::string_view status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::kPass: return "PASS";
    case CheckStatus::kFail: return "FAIL";
    case CheckStatus::kSkipped: return "SKIPPED";
  }
  return "?";
}

bool ShapeReport::passed() const {
  return std::none_of(results.begin(), results.end(), [](const auto& r) { return r.status == CheckStatus::kFail; });
}

const AssertionResult* ShapeReport::find(std::string_view name) const {
  for (const auto& r : results) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::string ShapeReport::text() const {
  std::ostringstream os;
  for (const auto& r : results) {
    os << status_name(r.status) << ' ' << r.name << ": " << r.detail;
    if (r.status != CheckStatus::kSkipped) os << ", margin " << fmt(r.margin) << " [" << r.cells << ']';
    os << '\n';
  }
  return os.str();
}

std::vector<std::string_view> shape_assertions() {
  return {"small_buffer_gap", "large_buffer_convergence", "epc_collapse",
          "backend_gap",      "thread_scaling",           "thread_plateau"};
}

ShapeReport shape_check(const std::vector<BenchRecord>& records, const ShapeCheckOptions& options) {
  if (options.backend.has_value() != (options.workload == Workload::kAesGcm)) {
    raise(Errc::kInvalidArgument, "AES-GCM checks need a backend; find_max checks take none");
  }
  const auto known = shape_assertions();
  for (const auto& name : options.only) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      raise(Errc::kInvalidArgument, "unknown assertion '" + name + "'");
    }
  }
  const auto selected = [&](std::string_view name) {
    return options.only.empty() || std::find(options.only.begin(), options.only.end(), name) != options.only.end();
  };

  Cells cells(records);
  Context ctx{cells, options, *variant_for(options.workload, VariantRole::kBaseline),
              *variant_for(options.workload, VariantRole::kInPlace),
              *variant_for(options.workload, VariantRole::kEnclaveLocal)};
  using Check = std::optional<AssertionResult> (*)(Context&);
  const std::pair<std::string_view, Check> checks[] = {
      {"small_buffer_gap", small_buffer_gap}, {"large_buffer_convergence", large_buffer_convergence},
      {"epc_collapse", epc_collapse},         {"backend_gap", backend_gap},
      {"thread_scaling", thread_scaling},     {"thread_plateau", thread_plateau},
  };

  ShapeReport report;
  for (const auto& [name, check] : checks) {
    if (!selected(name)) continue;
    if (auto r = check(ctx)) report.results.push_back(std::move(*r));
  }
  if (!cells.missing().empty()) {
    std::string list;
    for (const auto& m : cells.missing()) list += (list.empty() ? "" : ", ") + m;
    raise(Errc::kIncompleteMatrix, "missing cells: " + list);
  }
  return report;
}

unsigned detect_physical_cores() {
  // Only CPUs this process may run on count; a container often sees the
  // host's whole topology in sysfs.
  cpu_set_t allowed;
  CPU_ZERO(&allowed);
  if (sched_getaffinity(0, sizeof allowed, &allowed) != 0) return std::max(1u, std::thread::hardware_concurrency());
  std::set<std::pair<std::string, std::string>> cores;
  for (unsigned cpu = 0; cpu < CPU_SETSIZE; ++cpu) {
    if (!CPU_ISSET(cpu, &allowed)) continue;
    const std::string base = "/sys/devices/system/cpu/cpu" + std::to_string(cpu) + "/topology/";
    std::ifstream pkg(base + "physical_package_id");
    std::ifstream core(base + "core_id");
    if (!pkg || !core) {
      cores.emplace("cpu", std::to_string(cpu));
      continue;
    }
    std::string p, k;
    pkg >> p;
    core >> k;
    cores.emplace(p, k);
  }
  return std::max<unsigned>(1, static_cast<unsigned>(cores.size()));
}

}  // namespace encdp::bench
