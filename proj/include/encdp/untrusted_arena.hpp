#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "encdp/bytes.hpp"

namespace encdp {

class UntrustedArena;

/// A buffer in general (non-enclave) memory. Owned by exactly one holder;
/// registered with its arena so the confidentiality scan can see it.
class UntrustedBuffer {
 public:
  UntrustedBuffer() = default;
  UntrustedBuffer(UntrustedBuffer&& other) noexcept;
  UntrustedBuffer& operator=(UntrustedBuffer&& other) noexcept;
  UntrustedBuffer(const UntrustedBuffer&) = delete;
  UntrustedBuffer& operator=(const UntrustedBuffer&) = delete;
  ~UntrustedBuffer();

  std::uint8_t* data() noexcept { return data_; }
  const std::uint8_t* data() const noexcept { return data_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  MutableByteView span() noexcept { return {data_, size_}; }
  ByteView span() const noexcept { return {data_, size_}; }
  ByteView view() const noexcept { return {data_, size_}; }

  std::uint64_t id() const noexcept { return id_; }

 private:
  friend class UntrustedArena;
  UntrustedBuffer(UntrustedArena* arena, std::uint64_t id, std::uint8_t* data, std::size_t size)
      : arena_(arena), id_(id), data_(data), size_(size) {}
  void release() noexcept;

  UntrustedArena* arena_ = nullptr;
  std::uint64_t id_ = 0;
  std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

struct ScanHit {
  std::uint64_t buffer_id;
  std::string label;
  std::size_t offset;
};

struct ScanResult {
  bool found = false;
  std::vector<ScanHit> locations;
};

/// All untrusted-side memory used by the data path, the benchmarks and the
/// tests. Bounded by a byte capacity and fully enumerable.
class UntrustedArena {
 public:
  static constexpr std::size_t kDefaultCapacity = std::size_t{64} << 30;
  static constexpr std::size_t kMinNeedle = 16;

  explicit UntrustedArena(std::size_t capacity_bytes = kDefaultCapacity);
  UntrustedArena(const UntrustedArena&) = delete;
  UntrustedArena& operator=(const UntrustedArena&) = delete;
  ~UntrustedArena();

  /// Zero-initialized allocation. Throws OutOfEmulatedMemory past capacity.
  UntrustedBuffer allocate(std::size_t size, std::string label = {});
  UntrustedBuffer copy_of(ByteView bytes, std::string label = {});

  /// Exhaustive search of every live buffer. Needles shorter than 16 bytes
  /// are rejected with InvalidArgument.
  ScanResult scan(ByteView needle) const;

  /// Looks for any 16-byte window of `secret` that starts at a multiple of
  /// `stride`. With stride 1 this is exact; a larger stride still catches
  /// every leaked run of at least 15 + stride bytes.
  ScanResult scan_windows(ByteView secret, std::size_t stride = 1) const;

  std::size_t used_bytes() const;
  std::size_t capacity_bytes() const noexcept { return capacity_; }
  std::size_t live_buffers() const;

 private:
  friend class UntrustedBuffer;
  struct Entry {
    std::uint8_t* data;
    std::size_t size;
    std::string label;
  };
  void free(std::uint64_t id) noexcept;

  const std::size_t capacity_;
  mutable std::shared_mutex mutex_;
  std::map<std::uint64_t, Entry> live_;
  std::size_t used_ = 0;
  std::uint64_t next_id_ = 1;
};

/// Scan a set of arenas; the union of their hits.
ScanResult scan_untrusted(std::span<const UntrustedArena* const> arenas, ByteView needle);

}  // namespace encdp
