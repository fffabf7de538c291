#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "encdp/bytes.hpp"
#include "encdp/epc.hpp"
#include "encdp/op_control.hpp"

namespace encdp {

/// How a buffer crosses the trusted boundary, after the edl vocabulary:
/// AccessInPlace is `user_check`, CopyIn/CopyOut/CopyInOut are `in`/`out`/
/// `inout`, EnclaveLocal names memory already inside the trusted arena.
enum class BufferPlacement { kAccessInPlace, kCopyIn, kCopyOut, kCopyInOut, kEnclaveLocal };

std::string_view placement_name(BufferPlacement placement);

struct ParamSpec {
  std::string role;
  BufferPlacement placement;
};

struct GateConfig {
  /// Injected once per trusted call (entry + exit together).
  std::chrono::nanoseconds transition_cost{0};
  /// Optional throttle on CopyIn/CopyOut traffic, bytes per second.
  std::optional<double> copy_bandwidth_limit;
};

struct TransitionStats {
  std::uint64_t calls = 0;
  std::uint64_t bytes_copied_in = 0;
  std::uint64_t bytes_copied_out = 0;
  std::chrono::nanoseconds time_in_trusted{0};
};

struct CallHandle {
  std::uint64_t gate = 0;
  std::uint32_t index = 0;
};

/// A view of trusted-arena bytes handed to a trusted function.
class TrustedView {
 public:
  TrustedView() = default;
  TrustedView(EpcArena* arena, RegionHandle region, std::size_t offset, std::size_t length)
      : arena_(arena), region_(region), offset_(offset), length_(length) {}

  std::size_t size() const noexcept { return length_; }
  RegionHandle region() const noexcept { return region_; }
  std::size_t offset() const noexcept { return offset_; }

  void read(std::size_t pos, MutableByteView out) const {
    check(pos, out.size());
    if (!out.empty()) arena_->read(region_, offset_ + pos, out);
  }
  void write(std::size_t pos, ByteView data) const {
    check(pos, data.size());
    if (!data.empty()) arena_->write(region_, offset_ + pos, data);
  }
  template <class Fn>
  void visit(std::size_t pos, std::size_t len, Fn&& fn) const {
    check(pos, len);
    if (len != 0) arena_->visit(region_, offset_ + pos, len, std::forward<Fn>(fn));
  }
  template <class Fn>
  void visit_mut(std::size_t pos, std::size_t len, Fn&& fn) const {
    check(pos, len);
    if (len != 0) arena_->visit_mut(region_, offset_ + pos, len, std::forward<Fn>(fn));
  }

 private:
  void check(std::size_t pos, std::size_t len) const;

  EpcArena* arena_ = nullptr;
  RegionHandle region_{};
  std::size_t offset_ = 0;
  std::size_t length_ = 0;
};

/// Argument to a trusted call: an untrusted byte range or a trusted region.
class BufferRef {
 public:
  static BufferRef untrusted(MutableByteView bytes) { return BufferRef(bytes.data(), bytes.size(), true); }
  static BufferRef untrusted(ByteView bytes) {
    return BufferRef(const_cast<std::uint8_t*>(bytes.data()), bytes.size(), false);
  }
  static BufferRef local(RegionHandle region, std::size_t offset, std::size_t length) {
    BufferRef ref(nullptr, length, false);
    ref.region_ = region;
    ref.offset_ = offset;
    return ref;
  }

  bool is_local() const noexcept { return region_.valid(); }
  bool writable() const noexcept { return writable_; }
  std::uint8_t* data() const noexcept { return data_; }
  std::size_t size() const noexcept { return size_; }
  RegionHandle region() const noexcept { return region_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  BufferRef(std::uint8_t* data, std::size_t size, bool writable)
      : data_(data), size_(size), writable_(writable) {}

  std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
  bool writable_ = false;
  RegionHandle region_{};
  std::size_t offset_ = 0;
};

inline constexpr std::size_t kMaxCallParams = 8;

/// What the trusted function sees for each parameter.
class CallFrame {
 public:
  std::size_t param_count() const noexcept { return count_; }
  BufferPlacement placement(std::size_t i) const;

  /// AccessInPlace parameters.
  ByteView input(std::size_t i) const;
  MutableByteView output(std::size_t i) const;

  /// CopyIn/CopyOut/CopyInOut (materialized) and EnclaveLocal parameters.
  const TrustedView& trusted(std::size_t i) const;

  EpcArena& arena() const noexcept { return *arena_; }

 private:
  friend class CallScope;
  struct Param {
    BufferPlacement placement = BufferPlacement::kAccessInPlace;
    const BufferRef* ref = nullptr;
    TrustedView view;
    bool owns_region = false;
  };
  EpcArena* arena_ = nullptr;
  std::size_t count_ = 0;
  std::array<Param, kMaxCallParams> params_{};
};

class CallGate;

/// One crossing of the gate. Constructed on entry, completes on exit.
class CallScope {
 public:
  CallScope(CallGate& gate, CallHandle handle, std::span<const BufferRef> args,
            const OpControl* control = nullptr);
  CallScope(const CallScope&) = delete;
  CallScope& operator=(const CallScope&) = delete;
  ~CallScope();

  CallFrame& frame() noexcept { return frame_; }
  /// Copies CopyOut/CopyInOut parameters back to their untrusted buffers.
  void complete();

 private:
  void materialize(const std::vector<ParamSpec>& signature, std::span<const BufferRef> args);
  void release_regions() noexcept;

  CallGate& gate_;
  const OpControl* control_;
  CallFrame frame_;
  std::chrono::steady_clock::time_point entered_;
  bool completed_ = false;
};

/// The ECALL analogue. Calls are registered once with a fixed signature and
/// then invoked with a body that runs "inside" the boundary. The gate
/// enforces placements, materializes copies in the trusted arena, injects
/// the transition cost and keeps statistics. Safe for concurrent calls; the
/// call path takes no lock.
class CallGate {
 public:
  static constexpr std::size_t kMaxCalls = 256;

  explicit CallGate(EpcArena& arena, GateConfig config = {});
  CallGate(const CallGate&) = delete;
  CallGate& operator=(const CallGate&) = delete;

  /// Throws DuplicateCall when the name exists; InvalidArgument for an empty
  /// or oversized signature.
  CallHandle register_call(std::string_view name, std::vector<ParamSpec> signature);
  std::optional<CallHandle> find_call(std::string_view name) const;
  const std::vector<ParamSpec>& signature(CallHandle handle) const;

  template <class Fn>
  decltype(auto) trusted_call(CallHandle handle, std::span<const BufferRef> args, Fn&& body) {
    CallScope scope(*this, handle, args);
    if constexpr (std::is_void_v<std::invoke_result_t<Fn&, CallFrame&>>) {
      body(scope.frame());
      scope.complete();
    } else {
      auto result = body(scope.frame());
      scope.complete();
      return result;
    }
  }

  /// As above; CopyIn materialization honours `control` (cancellation and
  /// progress in copied bytes).
  template <class Fn>
  decltype(auto) trusted_call(CallHandle handle, std::span<const BufferRef> args, const OpControl& control,
                              Fn&& body) {
    CallScope scope(*this, handle, args, &control);
    if constexpr (std::is_void_v<std::invoke_result_t<Fn&, CallFrame&>>) {
      body(scope.frame());
      scope.complete();
    } else {
      auto result = body(scope.frame());
      scope.complete();
      return result;
    }
  }

  template <class Fn>
  decltype(auto) trusted_call(CallHandle handle, std::initializer_list<BufferRef> args, Fn&& body) {
    return trusted_call(handle, std::span<const BufferRef>(args.begin(), args.size()),
                        std::forward<Fn>(body));
  }

  TransitionStats stats() const;
  void reset_stats();

  const GateConfig& config() const noexcept { return config_; }
  EpcArena& arena() noexcept { return arena_; }

 private:
  friend class CallScope;
  struct Entry {
    std::string name;
    std::vector<ParamSpec> signature;
  };

  const Entry& entry(CallHandle handle) const;
  void spin_transition() const;
  void throttle_copy(std::size_t bytes, std::chrono::steady_clock::time_point start) const;

  EpcArena& arena_;
  const GateConfig config_;
  const std::uint64_t uid_;

  mutable std::mutex register_mutex_;
  std::unique_ptr<Entry[]> entries_;
  std::atomic<std::size_t> entry_count_{0};

  std::atomic<std::uint64_t> calls_{0};
  std::atomic<std::uint64_t> bytes_in_{0};
  std::atomic<std::uint64_t> bytes_out_{0};
  std::atomic<std::int64_t> trusted_ns_{0};
};

/// Registers a call, or returns the existing handle when another component
/// sharing the gate registered the same name with the same placements.
CallHandle ensure_call(CallGate& gate, std::string_view name, std::vector<ParamSpec> signature);

}  // namespace encdp
