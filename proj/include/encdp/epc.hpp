#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "encdp/bytes.hpp"
#include "encdp/untrusted_arena.hpp"

namespace encdp {

enum class EvictionPolicy { kClock, kLru };

struct EpcConfig {
  std::size_t budget_bytes = std::size_t{96} << 20;
  std::size_t page_size = 4096;
  EvictionPolicy eviction_policy = EvictionPolicy::kClock;
  /// Upper bound on the sum of live region sizes (resident or not).
  std::size_t emulation_cap_bytes = std::size_t{8} << 30;

  /// Throws InvalidArgument unless budget is a positive multiple of page size.
  void validate() const;
};

struct PagingStats {
  std::uint64_t evictions = 0;
  std::uint64_t loads = 0;  // page faults serviced, first-touch zero fills included
  std::uint64_t seal_bytes = 0;
  std::uint64_t unseal_bytes = 0;

  friend bool operator==(const PagingStats&, const PagingStats&) = default;
};

struct RegionHandle {
  std::uint64_t id = 0;

  bool valid() const noexcept { return id != 0; }
  friend bool operator==(const RegionHandle&, const RegionHandle&) = default;
};

struct PageKey {
  std::uint64_t region = 0;
  std::size_t page = 0;

  friend bool operator==(const PageKey&, const PageKey&) = default;
};

/// Sealed page = nonce(12) || ciphertext(page_size) || tag(16).
inline constexpr std::size_t kSealOverhead = kIvBytes + kTagBytes;

/// Emulated enclave page cache.
///
/// Regions are addressable byte ranges split into pages. At most
/// budget_bytes / page_size pages are resident (held in plaintext in trusted
/// frames); the rest live in the untrusted arena, sealed with AES-128-GCM
/// under a paging key that never leaves this object. A fault evicts a victim
/// chosen by the configured policy, sealing it, and loads the target,
/// verifying its seal.
///
/// Thread-safe. Faults on distinct pages run in parallel; only frame
/// bookkeeping (victim choice, free list) is under a single short lock.
class EpcArena {
 public:
  EpcArena(UntrustedArena& untrusted, EpcConfig config = {});
  EpcArena(const EpcArena&) = delete;
  EpcArena& operator=(const EpcArena&) = delete;
  ~EpcArena();

  RegionHandle alloc(std::size_t size);
  /// Releases the region's frames and sealed pages. Unknown handles are ignored.
  void free(RegionHandle region);

  bool contains(RegionHandle region) const;
  std::size_t region_size(RegionHandle region) const;
  std::size_t region_pages(RegionHandle region) const;

  void read(RegionHandle region, std::size_t offset, MutableByteView out);
  void write(RegionHandle region, std::size_t offset, ByteView data);

  /// Calls fn(ByteView) for each page-sized piece of [offset, offset+length),
  /// in order, with the page pinned resident for the duration of the call.
  template <class Fn>
  void visit(RegionHandle region, std::size_t offset, std::size_t length, Fn&& fn) {
    visit_pages(region, offset, length, false, &fn, [](void* ctx, std::uint8_t* p, std::size_t n) {
      (*static_cast<Fn*>(ctx))(ByteView(p, n));
    });
  }

  /// As visit(), with writable pieces.
  template <class Fn>
  void visit_mut(RegionHandle region, std::size_t offset, std::size_t length, Fn&& fn) {
    visit_pages(region, offset, length, true, &fn, [](void* ctx, std::uint8_t* p, std::size_t n) {
      (*static_cast<Fn*>(ctx))(MutableByteView(p, n));
    });
  }

  PagingStats paging_stats() const;
  void reset_paging_stats();

  std::size_t resident_bytes() const;
  std::size_t allocated_bytes() const;
  std::size_t frame_count() const noexcept { return frame_count_; }
  const EpcConfig& config() const noexcept { return config_; }
  /// Where sealed pages go; also the untrusted side of every gate.
  UntrustedArena& untrusted() const noexcept { return untrusted_; }

  // Oracle hooks for tests.
  void set_eviction_log(bool enabled);
  std::vector<PageKey> eviction_log() const;
  bool is_resident(RegionHandle region, std::size_t page) const;
  /// The sealed blob slot of a page, in untrusted memory. Only meaningful
  /// while the page is evicted.
  MutableByteView sealed_slot(RegionHandle region, std::size_t page);

 private:
  struct Page;
  struct Region;
  struct Frame;

  using VisitFn = void (*)(void*, std::uint8_t*, std::size_t);
  void visit_pages(RegionHandle region, std::size_t offset, std::size_t length, bool writable,
                   void* ctx, VisitFn fn);

  std::shared_ptr<Region> find(RegionHandle region) const;
  std::uint8_t* pin(Region& region, std::size_t page, std::unique_lock<std::mutex>& lock);
  std::int32_t obtain_frame(Region& region, std::size_t page);
  void release_region(Region& region) noexcept;
  void seal_page(Region& region, std::size_t page, const std::uint8_t* frame);
  bool unseal_page(Region& region, std::size_t page, std::uint8_t* frame);
  std::uint8_t* frame_data(std::int32_t frame) const noexcept;

  void lru_unlink(std::int32_t frame) noexcept;
  void lru_push_front(std::int32_t frame) noexcept;

  UntrustedArena& untrusted_;
  const EpcConfig config_;
  const std::size_t frame_count_;
  Key128 paging_key_{};

  std::unique_ptr<std::uint8_t, void (*)(void*)> frames_;
  std::unique_ptr<Frame[]> frame_meta_;

  mutable std::shared_mutex regions_mutex_;
  std::unordered_map<std::uint64_t, std::shared_ptr<Region>> regions_;
  std::uint64_t next_region_id_ = 1;
  std::size_t allocated_bytes_ = 0;

  mutable std::mutex frame_mutex_;  // free list, clock hand, LRU list, owners
  std::vector<std::int32_t> free_frames_;
  std::size_t clock_hand_ = 0;
  std::int32_t lru_head_ = -1;  // most recent
  std::int32_t lru_tail_ = -1;  // least recent
  std::size_t resident_frames_ = 0;
  std::size_t frames_touched_ = 0;
  bool log_evictions_ = false;
  std::vector<PageKey> eviction_log_;

  std::atomic<std::uint64_t> evictions_{0};
  std::atomic<std::uint64_t> loads_{0};
  std::atomic<std::uint64_t> seal_bytes_{0};
  std::atomic<std::uint64_t> unseal_bytes_{0};
};

/// Owns one region; a zero-size EpcRegion holds nothing and is valid to use
/// as an empty destination.
class EpcRegion {
 public:
  EpcRegion() = default;
  EpcRegion(EpcArena& arena, std::size_t size)
      : arena_(&arena), handle_(size ? arena.alloc(size) : RegionHandle{}), size_(size) {}
  EpcRegion(EpcRegion&& other) noexcept
      : arena_(other.arena_), handle_(std::exchange(other.handle_, {})), size_(std::exchange(other.size_, 0)) {}
  EpcRegion& operator=(EpcRegion&& other) noexcept {
    if (this != &other) {
      reset();
      arena_ = other.arena_;
      handle_ = std::exchange(other.handle_, {});
      size_ = std::exchange(other.size_, 0);
    }
    return *this;
  }
  ~EpcRegion() { reset(); }

  RegionHandle handle() const noexcept { return handle_; }
  std::size_t size() const noexcept { return size_; }
  EpcArena* arena() const noexcept { return arena_; }

  void reset() noexcept {
    if (handle_.valid()) arena_->free(handle_);
    handle_ = {};
    size_ = 0;
  }

 private:
  EpcArena* arena_ = nullptr;
  RegionHandle handle_{};
  std::size_t size_ = 0;
};

}  // namespace encdp
