#include "encdp/untrusted_arena.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <unordered_map>

#include "encdp/error.hpp"

namespace encdp {

UntrustedBuffer::UntrustedBuffer(UntrustedBuffer&& other) noexcept
    : arena_(other.arena_), id_(other.id_), data_(other.data_), size_(other.size_) {
  other.arena_ = nullptr;
  other.id_ = 0;
  other.data_ = nullptr;
  other.size_ = 0;
}

UntrustedBuffer& UntrustedBuffer::operator=(UntrustedBuffer&& other) noexcept {
  if (this != &other) {
    release();
    arena_ = std::exchange(other.arena_, nullptr);
    id_ = std::exchange(other.id_, 0);
    data_ = std::exchange(other.data_, nullptr);
    size_ = std::exchange(other.size_, 0);
  }
  return *this;
}

UntrustedBuffer::~UntrustedBuffer() { release(); }

void UntrustedBuffer::release() noexcept {
  if (arena_ != nullptr) arena_->free(id_);
  arena_ = nullptr;
  data_ = nullptr;
  size_ = 0;
}

UntrustedArena::UntrustedArena(std::size_t capacity_bytes) : capacity_(capacity_bytes) {}

UntrustedArena::~UntrustedArena() {
  // Buffers must not outlive their arena; anything left is reclaimed here.
  std::unique_lock lock(mutex_);
  for (auto& [id, entry] : live_) std::free(entry.data);
  live_.clear();
}

UntrustedBuffer UntrustedArena::allocate(std::size_t size, std::string label) {
  std::unique_lock lock(mutex_);
  if (size > capacity_ - used_) {
    raise(Errc::kOutOfEmulatedMemory,
          "untrusted arena capacity exceeded (" + std::to_string(size) + " bytes requested)");
  }
  // calloc keeps large allocations lazily committed.
  auto* data = static_cast<std::uint8_t*>(std::calloc(std::max<std::size_t>(size, 1), 1));
  if (data == nullptr) raise(Errc::kOutOfEmulatedMemory, "host allocation failed");
  const std::uint64_t id = next_id_++;
  live_.emplace(id, Entry{data, size, std::move(label)});
  used_ += size;
  return UntrustedBuffer(this, id, data, size);
}

UntrustedBuffer UntrustedArena::copy_of(ByteView bytes, std::string label) {
  UntrustedBuffer buf = allocate(bytes.size(), std::move(label));
  if (!bytes.empty()) std::memcpy(buf.data(), bytes.data(), bytes.size());
  return buf;
}

void UntrustedArena::free(std::uint64_t id) noexcept {
  std::unique_lock lock(mutex_);
  auto it = live_.find(id);
  if (it == live_.end()) return;
  used_ -= it->second.size;
  std::free(it->second.data);
  live_.erase(it);
}

ScanResult UntrustedArena::scan(ByteView needle) const {
  if (needle.size() < kMinNeedle) {
    raise(Errc::kInvalidArgument, "scan needle must be at least 16 bytes");
  }
  ScanResult result;
  const std::boyer_moore_horspool_searcher searcher(needle.begin(), needle.end());
  std::shared_lock lock(mutex_);
  for (const auto& [id, entry] : live_) {
    const std::uint8_t* begin = entry.data;
    const std::uint8_t* end = entry.data + entry.size;
    const std::uint8_t* pos = begin;
    while (pos < end) {
      pos = std::search(pos, end, searcher);
      if (pos == end) break;
      result.locations.push_back({id, entry.label, static_cast<std::size_t>(pos - begin)});
      ++pos;
    }
  }
  result.found = !result.locations.empty();
  return result;
}

namespace {

std::uint64_t window_hash(const std::uint8_t* p) {
  std::uint64_t a, b;
  std::memcpy(&a, p, 8);
  std::memcpy(&b, p + 8, 8);
  return (a * 0x9E3779B97F4A7C15ull) ^ ((b ^ (b >> 29)) * 0xBF58476D1CE4E5B9ull);
}

}  // namespace

ScanResult UntrustedArena::scan_windows(ByteView secret, std::size_t stride) const {
  constexpr std::size_t w = kMinNeedle;
  if (secret.size() < w) raise(Errc::kInvalidArgument, "secret shorter than one window");
  if (stride == 0) raise(Errc::kInvalidArgument, "stride must be positive");

  // Bit filter in front of an exact multimap from hash to window offset.
  constexpr unsigned kFilterBits = 24;
  std::vector<std::uint64_t> filter(std::size_t{1} << (kFilterBits - 6));
  std::unordered_multimap<std::uint64_t, std::size_t> windows;
  for (std::size_t off = 0; off + w <= secret.size(); off += stride) {
    const std::uint64_t h = window_hash(secret.data() + off);
    const std::uint64_t bit = h >> (64 - kFilterBits);
    filter[bit >> 6] |= std::uint64_t{1} << (bit & 63);
    windows.emplace(h, off);
  }

  ScanResult result;
  std::shared_lock lock(mutex_);
  for (const auto& [id, entry] : live_) {
    if (entry.size < w) continue;
    for (std::size_t pos = 0; pos + w <= entry.size; ++pos) {
      const std::uint64_t h = window_hash(entry.data + pos);
      const std::uint64_t bit = h >> (64 - kFilterBits);
      if (!(filter[bit >> 6] >> (bit & 63) & 1)) continue;
      auto [lo, hi] = windows.equal_range(h);
      for (auto it = lo; it != hi; ++it) {
        if (std::memcmp(entry.data + pos, secret.data() + it->second, w) == 0) {
          result.locations.push_back({id, entry.label, pos});
          break;
        }
      }
    }
  }
  result.found = !result.locations.empty();
  return result;
}

std::size_t UntrustedArena::used_bytes() const {
  std::shared_lock lock(mutex_);
  return used_;
}

std::size_t UntrustedArena::live_buffers() const {
  std::shared_lock lock(mutex_);
  return live_.size();
}

ScanResult scan_untrusted(std::span<const UntrustedArena* const> arenas, ByteView needle) {
  ScanResult merged;
  for (const UntrustedArena* arena : arenas) {
    ScanResult r = arena->scan(needle);
    merged.locations.insert(merged.locations.end(), r.locations.begin(), r.locations.end());
  }
  merged.found = !merged.locations.empty();
  return merged;
}

}  // namespace encdp
