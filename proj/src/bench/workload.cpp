#include "encdp/bench/workload.hpp"

#include <array>

namespace encdp::bench {
namespace {

struct VariantInfo {
  Variant variant;
  std::string_view name;
  Workload workload;
  VariantRole role;
  std::optional<BufferPlacement> placement;
};

constexpr std::array kVariants = {
    VariantInfo{Variant::kUntrusted, "untrusted", Workload::kFindMax, VariantRole::kBaseline, std::nullopt},
    VariantInfo{Variant::kCopyAndCompute, "copy_and_compute", Workload::kFindMax, VariantRole::kCopy,
                BufferPlacement::kCopyIn},
    VariantInfo{Variant::kComputeOnEnclaveMemory, "compute_on_enclave_memory", Workload::kFindMax,
                VariantRole::kEnclaveLocal, BufferPlacement::kEnclaveLocal},
    VariantInfo{Variant::kComputeOnCleartext, "compute_on_cleartext", Workload::kFindMax, VariantRole::kInPlace,
                BufferPlacement::kAccessInPlace},
    VariantInfo{Variant::kUntrustedBaseline, "untrusted_baseline", Workload::kAesGcm, VariantRole::kBaseline,
                std::nullopt},
    VariantInfo{Variant::kTrustedAccessInPlace, "trusted_access_in_place", Workload::kAesGcm, VariantRole::kInPlace,
                BufferPlacement::kAccessInPlace},
    VariantInfo{Variant::kTrustedEnclaveLocal, "trusted_enclave_local", Workload::kAesGcm,
                VariantRole::kEnclaveLocal, BufferPlacement::kEnclaveLocal},
};

constexpr std::array kFindMaxVariants = {Variant::kUntrusted, Variant::kCopyAndCompute,
                                         Variant::kComputeOnEnclaveMemory, Variant::kComputeOnCleartext};
constexpr std::array kAesVariants = {Variant::kUntrustedBaseline, Variant::kTrustedAccessInPlace,
                                     Variant::kTrustedEnclaveLocal};

const VariantInfo& info(Variant v) { return kVariants[static_cast<std::size_t>(v)]; }

}  // namespace

std::string_view workload_name(Workload w) { return w == Workload::kFindMax ? "findmax" : "aesgcm"; }

std::optional<Workload> parse_workload(std::string_view name) {
  if (name == "findmax") return Workload::kFindMax;
  if (name == "aesgcm") return Workload::kAesGcm;
  return std::nullopt;
}

std::string_view variant_name(Variant v) { return info(v).name; }

std::optional<Variant> parse_variant(std::string_view name) {
  for (const VariantInfo& i : kVariants) {
    if (i.name == name) return i.variant;
  }
  return std::nullopt;
}

Workload workload_of(Variant v) { return info(v).workload; }
VariantRole role_of(Variant v) { return info(v).role; }

std::span<const Variant> variants_of(Workload w) {
  if (w == Workload::kFindMax) return kFindMaxVariants;
  return kAesVariants;
}

std::optional<Variant> variant_for(Workload w, VariantRole role) {
  for (Variant v : variants_of(w)) {
    if (role_of(v) == role) return v;
  }
  return std::nullopt;
}

std::optional<BufferPlacement> placement_of(Variant v) { return info(v).placement; }

std::string_view backend_label(std::optional<CipherBackend> backend) {
  return backend ? backend_name(*backend) : std::string_view("none");
}

}  // namespace encdp::bench
