#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "encdp/aes_gcm.hpp"
#include "encdp/gate.hpp"

namespace encdp::bench {

enum class Workload { kFindMax, kAesGcm };

enum class Variant {
  // find_max
  kUntrusted,
  kCopyAndCompute,
  kComputeOnEnclaveMemory,
  kComputeOnCleartext,
  // AES-GCM
  kUntrustedBaseline,
  kTrustedAccessInPlace,
  kTrustedEnclaveLocal,
};

/// How a variant stands against its workload's untrusted baseline; the
/// shape assertions are phrased in these terms so they read the same for
/// both workloads.
enum class VariantRole { kBaseline, kInPlace, kEnclaveLocal, kCopy };

std::string_view workload_name(Workload w);
std::optional<Workload> parse_workload(std::string_view name);
std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

Workload workload_of(Variant v);
VariantRole role_of(Variant v);
std::span<const Variant> variants_of(Workload w);
std::optional<Variant> variant_for(Workload w, VariantRole role);
/// Placement of the timed call's buffer; nullopt when no call is made.
std::optional<BufferPlacement> placement_of(Variant v);

/// The backend column: "none" for find_max.
std::string_view backend_label(std::optional<CipherBackend> backend);

struct CellSpec {
  Variant variant = Variant::kUntrusted;
  std::optional<CipherBackend> backend;  // set exactly for AES-GCM
  std::size_t buffer_bytes = 0;
  unsigned threads = 1;

  Workload workload() const { return workload_of(variant); }
  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

}  // namespace encdp::bench
