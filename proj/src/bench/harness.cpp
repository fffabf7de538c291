#include "encdp/bench/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <barrier>
#include <cmath>
#include <cstring>
#include <exception>
#include <numeric>
#include <stop_token>
#include <system_error>
#include <thread>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

constexpr std::size_t kTileBytes = std::size_t{64} << 10;

Bytes make_tile(std::uint64_t seed) {
  Bytes tile(kTileBytes);
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + 1;
  for (std::size_t i = 0; i < tile.size(); i += 8) {
    // splitmix64
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    std::memcpy(tile.data() + i, &z, 8);
  }
  return tile;
}

void fill_from_tile(MutableByteView out, ByteView tile) {
  for (std::size_t pos = 0; pos < out.size(); pos += tile.size()) {
    std::memcpy(out.data() + pos, tile.data(), std::min(tile.size(), out.size() - pos));
  }
}

// Keeps results observable so the optimizer cannot drop the work.
thread_local volatile std::int64_t g_sink;
void consume(std::int64_t v) { g_sink = v; }

class FindMaxWorker final : public CellWorker {
 public:
  FindMaxWorker(CellEnvironment& env, FindMaxService& service, unsigned thread)
      : env_(env), service_(service), thread_(thread) {}

  void prepare() override {
    const std::size_t n = env_.cell().buffer_bytes;
    const Bytes tile = make_tile(thread_);
    if (env_.cell().variant == Variant::kComputeOnEnclaveMemory) {
      region_ = EpcRegion(env_.epc(), n);
      if (n != 0) env_.prepare_region(region_.handle(), n, tile);
    } else {
      buffer_ = env_.untrusted().allocate(n, "findmax input");
      fill_from_tile(buffer_.span(), tile);
    }
  }

  void iterate(const OpControl& control) override {
    switch (env_.cell().variant) {
      case Variant::kUntrusted: consume(service_.untrusted(buffer_.view(), control)); break;
      case Variant::kCopyAndCompute: consume(service_.copy_and_compute(buffer_.view(), control)); break;
      case Variant::kComputeOnCleartext: consume(service_.compute_on_cleartext(buffer_.view(), control)); break;
      case Variant::kComputeOnEnclaveMemory:
        consume(service_.compute_on_enclave_memory(region_.handle(), region_.size(), control));
        break;
      default: raise(Errc::kInvalidArgument, "not a find_max variant");
    }
  }

  std::uint64_t bytes_per_iteration() const override { return env_.cell().buffer_bytes; }
  // The copy in and the scan each count one unit per byte.
  std::uint64_t units_per_iteration() const override {
    const std::uint64_t n = env_.cell().buffer_bytes;
    return env_.cell().variant == Variant::kCopyAndCompute ? 2 * n : n;
  }

 private:
  CellEnvironment& env_;
  FindMaxService& service_;
  unsigned thread_;
  UntrustedBuffer buffer_;
  EpcRegion region_;
};

class AesWorker final : public CellWorker {
 public:
  AesWorker(CellEnvironment& env, CryptoEngine& engine, KeyId key, unsigned thread)
      : env_(env), engine_(engine), key_(key), thread_(thread) {}

  void prepare() override {
    const std::size_t n = env_.cell().buffer_bytes;
    const Bytes tile = make_tile(thread_);
    ciphertext_ = env_.untrusted().allocate(n, "aesgcm output");
    fill_from_tile(ciphertext_.span(), tile);
    switch (env_.cell().variant) {
      case Variant::kUntrustedBaseline:
        stream_ = make_gcm_stream(*env_.cell().backend);
        random_bytes(raw_key_);
        [[fallthrough]];
      case Variant::kTrustedAccessInPlace:
        plaintext_ = env_.untrusted().allocate(n, "aesgcm input");
        fill_from_tile(plaintext_.span(), tile);
        break;
      case Variant::kTrustedEnclaveLocal:
        region_ = EpcRegion(env_.epc(), n);
        if (n != 0) env_.prepare_region(region_.handle(), n, tile);
        break;
      default: raise(Errc::kInvalidArgument, "not an AES-GCM variant");
    }
  }

  void iterate(const OpControl& control) override {
    switch (env_.cell().variant) {
      case Variant::kUntrustedBaseline: seal_untrusted(control); break;
      case Variant::kTrustedAccessInPlace:
        engine_.encrypt(key_, plaintext_.view(), ciphertext_.span(), {}, control);
        break;
      case Variant::kTrustedEnclaveLocal:
        engine_.encrypt_local(key_, region_.handle(), 0, region_.size(), ciphertext_.span(), {}, control);
        break;
      default: raise(Errc::kInvalidArgument, "not an AES-GCM variant");
    }
  }

  std::uint64_t bytes_per_iteration() const override { return env_.cell().buffer_bytes; }

 private:
  // Same IV layout as the engine: lane (the thread) then a counter.
  void seal_untrusted(const OpControl& control) {
    Iv96 iv;
    store_be32(iv.data(), thread_);
    store_be64(iv.data() + 4, counter_++);
    const ByteView in = plaintext_.view();
    const MutableByteView out = ciphertext_.span();
    stream_->begin_seal(raw_key_, iv, {});
    for (std::size_t pos = 0; pos < in.size(); pos += kControlChunk) {
      control.check();
      const std::size_t n = std::min(kControlChunk, in.size() - pos);
      stream_->seal_update(in.subspan(pos, n), out.subspan(pos, n));
      control.advance(n);
    }
    const Tag128 tag = stream_->seal_finish();
    consume(tag[0]);
  }

  CellEnvironment& env_;
  CryptoEngine& engine_;
  KeyId key_;
  unsigned thread_;
  UntrustedBuffer plaintext_;
  UntrustedBuffer ciphertext_;
  EpcRegion region_;
  std::unique_ptr<GcmStream> stream_;
  Key128 raw_key_{};
  std::uint64_t counter_ = 0;
};

struct WorkerSlot {
  std::unique_ptr<CellWorker> worker;
  std::optional<WindowBins> bins;
  ThreadSpan span;
  std::exception_ptr error;
};

}  // namespace

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

WindowBins::WindowBins(Clock::time_point origin, Clock::duration width, unsigned count)
    : origin_(origin), width_(width), bins_(count, 0.0) {
  if (width <= Clock::duration::zero()) raise(Errc::kInvalidArgument, "window width must be positive");
}

void WindowBins::add(Clock::time_point start, Clock::time_point end, double bytes) {
  if (end < start) raise(Errc::kInvalidArgument, "interval ends before it starts");
  if (bins_.empty() || end < origin_ || start >= this->end()) return;
  const auto span = end - start;
  const auto first = std::max<std::int64_t>(0, (start - origin_) / width_);
  const auto last = std::min<std::int64_t>(static_cast<std::int64_t>(bins_.size()) - 1, (end - origin_) / width_);
  for (std::int64_t i = first; i <= last; ++i) {
    const auto lo = origin_ + width_ * i;
    const auto hi = lo + width_;
    if (span == Clock::duration::zero()) {
      if (start >= lo && start < hi) bins_[static_cast<std::size_t>(i)] += bytes;
      continue;
    }
    const auto overlap = std::min(end, hi) - std::max(start, lo);
    if (overlap > Clock::duration::zero()) {
      bins_[static_cast<std::size_t>(i)] +=
          bytes * std::chrono::duration<double>(overlap).count() / std::chrono::duration<double>(span).count();
    }
  }
}

std::size_t default_mem_cap() {
  const long pages = sysconf(_SC_PHYS_PAGES);
  const long page = sysconf(_SC_PAGE_SIZE);
  if (pages <= 0 || page <= 0) return std::size_t{2} << 30;
  return static_cast<std::size_t>(static_cast<double>(pages) * static_cast<double>(page) * 0.7);
}

void HarnessConfig::validate() const {
  if (reps == 0) raise(Errc::kInvalidArgument, "reps must be at least 1");
  if (window <= Clock::duration::zero()) raise(Errc::kInvalidArgument, "window must be positive");
  if (warmup < Clock::duration::zero() || cooldown < Clock::duration::zero()) {
    raise(Errc::kInvalidArgument, "warm-up and cool-down must not be negative");
  }
  if (gate.transition_cost < std::chrono::nanoseconds::zero()) {
    raise(Errc::kInvalidArgument, "transition cost must not be negative");
  }
  epc.validate();
}

CellResult measure(unsigned threads, const WorkerFactory& make_worker, const HarnessConfig& config,
                   const std::function<CounterSnapshot()>& counters) {
  config.validate();
  if (threads == 0) raise(Errc::kInvalidArgument, "a cell needs at least one thread");

  std::vector<WorkerSlot> slots(threads);
  Clock::time_point t0;
  std::barrier start(static_cast<std::ptrdiff_t>(threads) + 1, [&t0]() noexcept { t0 = Clock::now(); });
  std::stop_source stop;

  auto body = [&](unsigned index) {
    WorkerSlot& slot = slots[index];
    try {
      slot.worker = make_worker(index);
      slot.worker->prepare();
    } catch (...) {
      slot.error = std::current_exception();
    }
    start.arrive_and_wait();
    if (slot.error || stop.stop_requested()) return;

    CellWorker& w = *slot.worker;
    slot.bins.emplace(t0 + config.warmup, config.window, config.reps);
    const double bytes_full = static_cast<double>(w.bytes_per_iteration());
    const double per_unit = w.units_per_iteration() ? bytes_full / static_cast<double>(w.units_per_iteration()) : 0;
    std::uint64_t progress = 0;
    const OpControl control{stop.get_token(), &progress};
    while (!stop.stop_requested()) {
      progress = 0;
      const auto begin = Clock::now();
      double bytes = bytes_full;
      try {
        w.iterate(control);
      } catch (const Error& e) {
        if (e.code() != Errc::kCancelled) {
          slot.error = std::current_exception();
          return;
        }
        bytes = static_cast<double>(progress) * per_unit;
      } catch (...) {
        slot.error = std::current_exception();
        return;
      }
      const auto end = Clock::now();
      slot.bins->add(begin, end, bytes);
      if (slot.span.iterations++ == 0) slot.span.first_start = begin;
      slot.span.last_end = end;
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(threads);
  try {
    for (unsigned i = 0; i < threads; ++i) {
      if (i >= config.thread_limit) {
        throw std::system_error(std::make_error_code(std::errc::resource_unavailable_try_again),
                                "thread limit reached");
      }
      pool.emplace_back(body, i);
    }
  } catch (const std::system_error& e) {
    // Release the workers already waiting at the barrier, then unwind.
    const std::size_t started = pool.size();
    stop.request_stop();
    for (std::size_t k = started; k < threads; ++k) start.arrive_and_drop();
    start.arrive_and_wait();
    pool.clear();
    raise(Errc::kHarnessError, "started " + std::to_string(started) + " of " + std::to_string(threads) +
                                   " worker threads: " + e.what());
  }

  start.arrive_and_wait();
  const auto measure_begin = t0 + config.warmup;
  const auto measure_end = measure_begin + config.window * config.reps;
  const bool failed_early = std::any_of(slots.begin(), slots.end(), [](const WorkerSlot& s) { return s.error; });
  CounterSnapshot c0, c1;
  if (!failed_early) {
    std::this_thread::sleep_until(measure_begin);
    if (counters) c0 = counters();
    std::this_thread::sleep_until(measure_end);
    if (counters) c1 = counters();
    std::this_thread::sleep_until(measure_end + config.cooldown);
  }
  stop.request_stop();
  for (std::jthread& t : pool) t.join();
  const auto wall = Clock::now() - t0;
  for (WorkerSlot& s : slots) {
    if (s.error) std::rethrow_exception(s.error);
  }

  CellResult result;
  CellDiagnostics& d = result.diagnostics;
  d.measure_begin = measure_begin;
  d.measure_end = measure_end;
  d.wall = wall;
  d.window_mbps.assign(config.reps, 0.0);
  const double window_s = std::chrono::duration<double>(config.window).count();
  d.overlap_ok = true;
  for (const WorkerSlot& s : slots) {
    for (unsigned r = 0; r < config.reps; ++r) d.window_mbps[r] += throughput_mbps(s.bins->bins()[r], window_s);
    d.threads.push_back(s.span);
    d.overlap_ok = d.overlap_ok && s.span.iterations > 0 && s.span.first_start <= measure_begin &&
                   s.span.last_end >= measure_end;
  }

  BenchRecord& rec = result.record;
  const Summary sum = summarize(d.window_mbps);
  rec.threads = threads;
  rec.reps = config.reps;
  rec.mean_mbps = sum.mean;
  rec.stddev_mbps = sum.stddev;
  rec.transitions = c1.transitions - c0.transitions;
  rec.bytes_copied_in = c1.bytes_copied_in - c0.bytes_copied_in;
  rec.evictions = c1.evictions - c0.evictions;
  return result;
}

std::size_t estimate_cell_memory(const CellSpec& cell) {
  // find_max keeps one buffer per thread, except copy_and_compute which also
  // holds the enclave copy. AES-GCM keeps input and output.
  std::size_t copies = 2;
  if (cell.workload() == Workload::kFindMax && cell.variant != Variant::kCopyAndCompute) copies = 1;
  return copies * cell.buffer_bytes * cell.threads;
}

CellEnvironment::CellEnvironment(const CellSpec& cell, const HarnessConfig& config)
    : cell_(cell),
      epc_(untrusted_, config.epc),
      gate_(epc_, config.gate),
      prepare_call_(ensure_call(gate_, "bench_prepare",
                                {{"tile", BufferPlacement::kAccessInPlace}, {"region", BufferPlacement::kEnclaveLocal}})) {
  if (cell.backend.has_value() != (cell.workload() == Workload::kAesGcm)) {
    raise(Errc::kInvalidArgument, "a backend is required for AES-GCM cells and meaningless for find_max");
  }
  if (cell.workload() == Workload::kFindMax) {
    find_max_.emplace(gate_);
  } else {
    engine_.emplace(gate_, EngineConfig{.backend = *cell.backend});
    key_ = engine_->generate_key();
  }
}

std::unique_ptr<CellWorker> CellEnvironment::make_worker(unsigned thread_index) {
  if (find_max_) return std::make_unique<FindMaxWorker>(*this, *find_max_, thread_index);
  return std::make_unique<AesWorker>(*this, *engine_, key_, thread_index);
}

CounterSnapshot CellEnvironment::counters() const {
  const TransitionStats t = gate_.stats();
  return {t.calls, t.bytes_copied_in, epc_.paging_stats().evictions};
}

void CellEnvironment::prepare_region(RegionHandle region, std::size_t size, ByteView tile) {
  if (tile.empty()) raise(Errc::kInvalidArgument, "empty tile");
  gate_.trusted_call(prepare_call_, {BufferRef::untrusted(tile), BufferRef::local(region, 0, size)},
                     [&](CallFrame& f) {
                       const ByteView t = f.input(0);
                       std::size_t pos = 0;
                       f.trusted(1).visit_mut(0, size, [&](MutableByteView piece) {
                         for (std::size_t i = 0; i < piece.size();) {
                           const std::size_t at = (pos + i) % t.size();
                           const std::size_t n = std::min(piece.size() - i, t.size() - at);
                           std::memcpy(piece.data() + i, t.data() + at, n);
                           i += n;
                         }
                         pos += piece.size();
                       });
                     });
}

CellResult run_cell(const CellSpec& cell, const HarnessConfig& config) {
  config.validate();
  const std::size_t need = estimate_cell_memory(cell);
  if (need > config.mem_cap) {
    raise(Errc::kHarnessError, "cell needs about " + std::to_string(need >> 20) + " MiB, over the " +
                                   std::to_string(config.mem_cap >> 20) + " MiB memory cap");
  }
  CellEnvironment env(cell, config);
  CellResult result = measure(
      cell.threads, [&](unsigned i) { return env.make_worker(i); }, config, [&] { return env.counters(); });
  result.record.variant = cell.variant;
  result.record.backend = cell.backend;
  result.record.buffer_bytes = cell.buffer_bytes;
  return result;
}

}  // namespace encdp::bench
