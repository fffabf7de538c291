#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "encdp/bench/find_max.hpp"
#include "encdp/bench/record.hpp"
#include "encdp/crypto_engine.hpp"
#include "encdp/epc.hpp"
#include "encdp/gate.hpp"
#include "encdp/op_control.hpp"
#include "encdp/untrusted_arena.hpp"

namespace encdp::bench {

using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

/// MB/s with MB = 10^6 bytes.
inline double throughput_mbps(double bytes, double seconds) { return bytes / seconds / 1e6; }

struct Summary {
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single value
};
Summary summarize(std::span<const double> values);

/// Byte accounting over `count` back-to-back windows of `width` starting at
/// `origin`. An operation's bytes are spread evenly over its duration, so
/// each window is credited exactly the share that fell inside it.
class WindowBins {
 public:
  WindowBins(Clock::time_point origin, Clock::duration width, unsigned count);

  void add(Clock::time_point start, Clock::time_point end, double bytes);

  std::span<const double> bins() const noexcept { return bins_; }
  Clock::time_point begin() const noexcept { return origin_; }
  Clock::time_point end() const noexcept { return origin_ + width_ * static_cast<long>(bins_.size()); }

 private:
  Clock::time_point origin_;
  Clock::duration width_;
  std::vector<double> bins_;
};

/// 70% of physical memory; 2 GiB if it cannot be determined.
std::size_t default_mem_cap();

struct HarnessConfig {
  Clock::duration warmup = 200ms;
  Clock::duration cooldown = 200ms;
  /// Each repetition is one window of this length inside the measured span.
  Clock::duration window = 10ms;
  unsigned reps = 30;
  GateConfig gate{.transition_cost = 10us, .copy_bandwidth_limit = std::nullopt};
  EpcConfig epc;
  /// Cells whose estimated footprint exceeds this fail instead of running.
  std::size_t mem_cap = default_mem_cap();
  /// Worker threads a single cell may start.
  unsigned thread_limit = std::numeric_limits<unsigned>::max();

  /// InvalidArgument on zero reps, a non-positive window or a bad EPC config.
  void validate() const;
};

/// One thread's share of a cell.
class CellWorker {
 public:
  virtual ~CellWorker() = default;
  /// Runs on the worker thread before the start barrier: allocate and touch
  /// buffers so they are hot when timing starts.
  virtual void prepare() = 0;
  /// One operation on this thread's own buffer. Once control.stop fires it
  /// may throw Cancelled; control.progress counts work units done so far.
  virtual void iterate(const OpControl& control) = 0;
  virtual std::uint64_t bytes_per_iteration() const = 0;
  /// Progress units in a whole iteration; a cancelled iteration is credited
  /// bytes in proportion.
  virtual std::uint64_t units_per_iteration() const { return bytes_per_iteration(); }
};

using WorkerFactory = std::function<std::unique_ptr<CellWorker>(unsigned thread_index)>;

struct CounterSnapshot {
  std::uint64_t transitions = 0;
  std::uint64_t bytes_copied_in = 0;
  std::uint64_t evictions = 0;
};

struct ThreadSpan {
  Clock::time_point first_start;
  Clock::time_point last_end;
  std::uint64_t iterations = 0;
};

struct CellDiagnostics {
  std::vector<double> window_mbps;  // aggregate over threads, one per rep
  Clock::time_point measure_begin;
  Clock::time_point measure_end;
  std::vector<ThreadSpan> threads;
  /// Every worker was busy from before measure_begin until after measure_end.
  bool overlap_ok = false;
  Clock::duration wall{};
};

struct CellResult {
  BenchRecord record;
  CellDiagnostics diagnostics;
};

/// Runs `threads` workers plus the calling thread as coordinator: all
/// workers prepare, meet at a barrier, then loop until the coordinator stops
/// them after warm-up, reps windows and cool-down. Fills the measured part
/// of the record; workload fields are left to the caller.
///
/// HarnessError if a thread cannot be started; the first error a worker
/// raises (other than the final Cancelled) is rethrown.
CellResult measure(unsigned threads, const WorkerFactory& make_worker, const HarnessConfig& config,
                   const std::function<CounterSnapshot()>& counters = {});

/// Bytes a cell keeps live across all its threads.
std::size_t estimate_cell_memory(const CellSpec& cell);

/// Everything one cell runs against: fresh arenas, a gate with the
/// configured transition cost and, per workload, the engine or the find_max
/// calls. Workers only share it through thread-safe interfaces.
class CellEnvironment {
 public:
  CellEnvironment(const CellSpec& cell, const HarnessConfig& config);
  CellEnvironment(const CellEnvironment&) = delete;
  CellEnvironment& operator=(const CellEnvironment&) = delete;

  std::unique_ptr<CellWorker> make_worker(unsigned thread_index);
  CounterSnapshot counters() const;

  const CellSpec& cell() const noexcept { return cell_; }
  UntrustedArena& untrusted() noexcept { return untrusted_; }
  EpcArena& epc() noexcept { return epc_; }
  CallGate& gate() noexcept { return gate_; }

  /// One call that fills bytes [0, size) of `region` by repeating `tile`.
  void prepare_region(RegionHandle region, std::size_t size, ByteView tile);

 private:
  CellSpec cell_;
  UntrustedArena untrusted_;
  EpcArena epc_;
  CallGate gate_;
  CallHandle prepare_call_;
  std::optional<FindMaxService> find_max_;
  std::optional<CryptoEngine> engine_;
  KeyId key_ = 0;
};

/// measure() over a fresh CellEnvironment, with the workload columns filled
/// in. HarnessError when the cell is over config.mem_cap.
CellResult run_cell(const CellSpec& cell, const HarnessConfig& config);

}  // namespace encdp::bench
