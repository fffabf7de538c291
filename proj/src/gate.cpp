#include "encdp/gate.hpp"

#include <algorithm>

#include "encdp/error.hpp"

namespace encdp {

namespace {
std::atomic<std::uint64_t> next_gate_uid{1};
}

std::string_view placement_name(BufferPlacement placement) {
  switch (placement) {
    case BufferPlacement::kAccessInPlace: return "AccessInPlace";
    case BufferPlacement::kCopyIn: return "CopyIn";
    case BufferPlacement::kCopyOut: return "CopyOut";
    case BufferPlacement::kCopyInOut: return "CopyInOut";
    case BufferPlacement::kEnclaveLocal: return "EnclaveLocal";
  }
  return "?";
}

void TrustedView::check(std::size_t pos, std::size_t len) const {
  if (pos > length_ || len > length_ - pos) raise(Errc::kBoundsError, "trusted view access out of range");
}

BufferPlacement CallFrame::placement(std::size_t i) const {
  if (i >= count_) raise(Errc::kBoundsError, "no such call parameter");
  return params_[i].placement;
}

ByteView CallFrame::input(std::size_t i) const {
  if (placement(i) != BufferPlacement::kAccessInPlace) {
    raise(Errc::kPlacementViolation, "parameter is not AccessInPlace");
  }
  return {params_[i].ref->data(), params_[i].ref->size()};
}

MutableByteView CallFrame::output(std::size_t i) const {
  const ByteView in = input(i);
  if (!params_[i].ref->writable()) raise(Errc::kPlacementViolation, "parameter is read-only");
  return {const_cast<std::uint8_t*>(in.data()), in.size()};
}

const TrustedView& CallFrame::trusted(std::size_t i) const {
  if (placement(i) == BufferPlacement::kAccessInPlace) {
    raise(Errc::kPlacementViolation, "AccessInPlace parameter has no trusted view");
  }
  return params_[i].view;
}

CallGate::CallGate(EpcArena& arena, GateConfig config)
    : arena_(arena),
      config_(config),
      uid_(next_gate_uid.fetch_add(1)),
      entries_(std::make_unique<Entry[]>(kMaxCalls)) {
  if (config_.transition_cost.count() < 0) raise(Errc::kInvalidArgument, "negative transition cost");
  if (config_.copy_bandwidth_limit && !(*config_.copy_bandwidth_limit > 0)) {
    raise(Errc::kInvalidArgument, "copy bandwidth limit must be positive");
  }
}

CallHandle CallGate::register_call(std::string_view name, std::vector<ParamSpec> signature) {
  if (signature.empty() || signature.size() > kMaxCallParams) {
    raise(Errc::kInvalidArgument, "call signature must have 1.." + std::to_string(kMaxCallParams) +
                                      " parameters");
  }
  std::lock_guard lock(register_mutex_);
  const std::size_t n = entry_count_.load(std::memory_order_relaxed);
  for (std::size_t i = 0; i < n; ++i) {
    if (entries_[i].name == name) raise(Errc::kDuplicateCall, std::string(name));
  }
  if (n == kMaxCalls) raise(Errc::kInvalidArgument, "call table full");
  entries_[n] = Entry{std::string(name), std::move(signature)};
  entry_count_.store(n + 1, std::memory_order_release);
  return CallHandle{uid_, static_cast<std::uint32_t>(n)};
}

std::optional<CallHandle> CallGate::find_call(std::string_view name) const {
  const std::size_t n = entry_count_.load(std::memory_order_acquire);
  for (std::size_t i = 0; i < n; ++i) {
    if (entries_[i].name == name) return CallHandle{uid_, static_cast<std::uint32_t>(i)};
  }
  return std::nullopt;
}

const CallGate::Entry& CallGate::entry(CallHandle handle) const {
  if (handle.gate != uid_ || handle.index >= entry_count_.load(std::memory_order_acquire)) {
    raise(Errc::kUnknownCall, "handle not registered with this gate");
  }
  return entries_[handle.index];
}

const std::vector<ParamSpec>& CallGate::signature(CallHandle handle) const {
  return entry(handle).signature;
}

void CallGate::spin_transition() const {
  if (config_.transition_cost.count() == 0) return;
  const auto deadline = std::chrono::steady_clock::now() + config_.transition_cost;
  while (std::chrono::steady_clock::now() < deadline) {
  }
}

void CallGate::throttle_copy(std::size_t bytes, std::chrono::steady_clock::time_point start) const {
  if (!config_.copy_bandwidth_limit) return;
  const auto budget = std::chrono::duration<double>(static_cast<double>(bytes) / *config_.copy_bandwidth_limit);
  const auto deadline = start + std::chrono::duration_cast<std::chrono::nanoseconds>(budget);
  while (std::chrono::steady_clock::now() < deadline) {
  }
}

TransitionStats CallGate::stats() const {
  TransitionStats s;
  s.calls = calls_.load(std::memory_order_relaxed);
  s.bytes_copied_in = bytes_in_.load(std::memory_order_relaxed);
  s.bytes_copied_out = bytes_out_.load(std::memory_order_relaxed);
  s.time_in_trusted = std::chrono::nanoseconds(trusted_ns_.load(std::memory_order_relaxed));
  return s;
}

void CallGate::reset_stats() {
  calls_.store(0);
  bytes_in_.store(0);
  bytes_out_.store(0);
  trusted_ns_.store(0);
}

CallScope::CallScope(CallGate& gate, CallHandle handle, std::span<const BufferRef> args, const OpControl* control)
    : gate_(gate), control_(control) {
  const auto& signature = gate.entry(handle).signature;
  if (args.size() != signature.size()) {
    raise(Errc::kPlacementViolation, "argument count does not match the registered signature");
  }
  for (std::size_t i = 0; i < args.size(); ++i) {
    const BufferPlacement p = signature[i].placement;
    const BufferRef& ref = args[i];
    if (p == BufferPlacement::kEnclaveLocal) {
      if (!ref.is_local()) {
        raise(Errc::kPlacementViolation, signature[i].role + ": untrusted buffer passed as EnclaveLocal");
      }
      if (!gate.arena_.contains(ref.region())) {
        raise(Errc::kPlacementViolation, signature[i].role + ": unknown trusted region");
      }
      const std::size_t size = gate.arena_.region_size(ref.region());
      if (ref.offset() > size || ref.size() > size - ref.offset()) {
        raise(Errc::kPlacementViolation, signature[i].role + ": range outside trusted region");
      }
    } else {
      if (ref.is_local()) {
        raise(Errc::kPlacementViolation, signature[i].role + ": trusted region passed as untrusted buffer");
      }
      if ((p == BufferPlacement::kCopyOut || p == BufferPlacement::kCopyInOut) && !ref.writable()) {
        raise(Errc::kPlacementViolation, signature[i].role + ": copy-out needs a writable buffer");
      }
    }
  }

  frame_.arena_ = &gate.arena_;
  frame_.count_ = args.size();
  gate.calls_.fetch_add(1, std::memory_order_relaxed);
  gate.spin_transition();
  entered_ = std::chrono::steady_clock::now();

  try {
    materialize(signature, args);
  } catch (...) {
    release_regions();
    throw;
  }
}

void CallScope::materialize(const std::vector<ParamSpec>& signature, std::span<const BufferRef> args) {
  CallGate& gate = gate_;
  for (std::size_t i = 0; i < args.size(); ++i) {
    auto& param = frame_.params_[i];
    param.placement = signature[i].placement;
    param.ref = &args[i];
    const BufferRef& ref = args[i];
    switch (param.placement) {
      case BufferPlacement::kAccessInPlace:
        break;
      case BufferPlacement::kEnclaveLocal:
        param.view = TrustedView(&gate.arena_, ref.region(), ref.offset(), ref.size());
        break;
      case BufferPlacement::kCopyIn:
      case BufferPlacement::kCopyOut:
      case BufferPlacement::kCopyInOut: {
        if (ref.size() == 0) {
          param.view = TrustedView(&gate.arena_, RegionHandle{}, 0, 0);
          break;
        }
        const RegionHandle region = gate.arena_.alloc(ref.size());
        param.owns_region = true;
        param.view = TrustedView(&gate.arena_, region, 0, ref.size());
        if (param.placement != BufferPlacement::kCopyOut) {
          const auto start = std::chrono::steady_clock::now();
          if (control_ == nullptr) {
            gate.arena_.write(region, 0, {ref.data(), ref.size()});
          } else {
            for (std::size_t pos = 0; pos < ref.size(); pos += kControlChunk) {
              control_->check();
              const std::size_t n = std::min(kControlChunk, ref.size() - pos);
              gate.arena_.write(region, pos, {ref.data() + pos, n});
              control_->advance(n);
            }
          }
          gate.throttle_copy(ref.size(), start);
          gate.bytes_in_.fetch_add(ref.size(), std::memory_order_relaxed);
        }
        break;
      }
    }
  }
}

void CallScope::complete() {
  for (std::size_t i = 0; i < frame_.count_; ++i) {
    auto& param = frame_.params_[i];
    if (param.placement != BufferPlacement::kCopyOut && param.placement != BufferPlacement::kCopyInOut) {
      continue;
    }
    const BufferRef& ref = *param.ref;
    if (ref.size() != 0) {
      const auto start = std::chrono::steady_clock::now();
      gate_.arena_.read(param.view.region(), 0, {ref.data(), ref.size()});
      gate_.throttle_copy(ref.size(), start);
    }
    gate_.bytes_out_.fetch_add(ref.size(), std::memory_order_relaxed);
  }
  completed_ = true;
}

void CallScope::release_regions() noexcept {
  for (std::size_t i = 0; i < frame_.count_; ++i) {
    auto& param = frame_.params_[i];
    if (param.owns_region) gate_.arena_.free(param.view.region());
    param.owns_region = false;
  }
}

CallScope::~CallScope() {
  release_regions();
  if (frame_.count_ != 0) {
    const auto elapsed = std::chrono::steady_clock::now() - entered_;
    gate_.trusted_ns_.fetch_add(std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed).count(),
                                std::memory_order_relaxed);
  }
}

CallHandle ensure_call(CallGate& gate, std::string_view name, std::vector<ParamSpec> signature) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (auto existing = gate.find_call(name)) {
      const auto& have = gate.signature(*existing);
      const bool same = have.size() == signature.size() &&
                        std::equal(have.begin(), have.end(), signature.begin(), [](const auto& a, const auto& b) {
                          return a.placement == b.placement;
                        });
      if (!same) raise(Errc::kDuplicateCall, std::string(name) + " registered with another signature");
      return *existing;
    }
    try {
      return gate.register_call(name, signature);
    } catch (const Error& e) {
      if (e.code() != Errc::kDuplicateCall) throw;  // lost a race; look again
    }
  }
  raise(Errc::kDuplicateCall, std::string(name));
}

}  // namespace encdp
