#pragma once

#include <cstdint>

#include "encdp/bytes.hpp"
#include "encdp/epc.hpp"
#include "encdp/gate.hpp"
#include "encdp/op_control.hpp"

namespace encdp::bench {

/// Largest little-endian int32 in `data`; trailing bytes past the last whole
/// integer are ignored. Throws EmptyInput if there is no whole integer.
std::int32_t find_max(ByteView data, const OpControl& control = {});

/// The toy workload behind each of its four placements. Calls are registered
/// on the gate once; every method except untrusted() is exactly one call.
class FindMaxService {
 public:
  explicit FindMaxService(CallGate& gate);

  /// Plain function call, no boundary crossed.
  std::int32_t untrusted(ByteView data, const OpControl& control = {}) const;
  /// The buffer is copied into a fresh enclave region first.
  std::int32_t copy_and_compute(ByteView data, const OpControl& control = {});
  /// The enclave reads the untrusted buffer where it lies.
  std::int32_t compute_on_cleartext(ByteView data, const OpControl& control = {});
  /// Scans bytes [0, length) of an enclave region, typically filled by
  /// an earlier prepare() call.
  std::int32_t compute_on_enclave_memory(RegionHandle region, std::size_t length, const OpControl& control = {});

  /// One call that copies `data` into `region` at offset 0.
  void prepare(ByteView data, RegionHandle region);

 private:
  CallGate& gate_;
  CallHandle copy_;
  CallHandle cleartext_;
  CallHandle enclave_;
  CallHandle load_;
};

}  // namespace encdp::bench
