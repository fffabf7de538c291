#include "encdp/epc.hpp"

#include <cstdlib>
#include <cstring>
#include <thread>

#include "encdp/aes_gcm.hpp"
#include "encdp/error.hpp"

namespace encdp {

struct EpcArena::Page {
  std::mutex mutex;
  std::int32_t frame = -1;
  bool sealed = false;  // slot in the region's slab holds this page's contents
};

struct EpcArena::Region {
  std::uint64_t id = 0;
  std::size_t size = 0;
  std::size_t pages = 0;
  std::unique_ptr<Page[]> page;
  UntrustedBuffer slab;
  EpcArena* arena = nullptr;

  ~Region() {
    if (arena != nullptr) arena->release_region(*this);
  }
};

struct EpcArena::Frame {
  Region* region = nullptr;
  std::size_t page = 0;
  std::atomic<std::uint8_t> referenced{0};
  std::int32_t prev = -1;
  std::int32_t next = -1;
};

void EpcConfig::validate() const {
  if (page_size == 0 || budget_bytes == 0 || budget_bytes % page_size != 0) {
    raise(Errc::kInvalidArgument, "EPC budget must be a positive multiple of the page size");
  }
}

EpcArena::EpcArena(UntrustedArena& untrusted, EpcConfig config)
    : untrusted_(untrusted),
      config_((config.validate(), config)),
      frame_count_(config.budget_bytes / config.page_size),
      frames_(static_cast<std::uint8_t*>(std::calloc(config.budget_bytes, 1)), &std::free),
      frame_meta_(std::make_unique<Frame[]>(frame_count_)) {
  if (!frames_) raise(Errc::kOutOfEmulatedMemory, "cannot reserve EPC frames");
  random_bytes(paging_key_);
  free_frames_.reserve(frame_count_);
  for (std::size_t f = frame_count_; f-- > 0;) free_frames_.push_back(static_cast<std::int32_t>(f));
}

EpcArena::~EpcArena() {
  std::unordered_map<std::uint64_t, std::shared_ptr<Region>> doomed;
  {
    std::unique_lock lock(regions_mutex_);
    doomed.swap(regions_);
  }
  doomed.clear();
  // Frames past the high-water mark were never handed out (and never faulted in).
  secure_wipe({frames_.get(), frames_touched_ * config_.page_size});
  secure_wipe(paging_key_);
}

RegionHandle EpcArena::alloc(std::size_t size) {
  if (size == 0) raise(Errc::kInvalidArgument, "cannot allocate an empty EPC region");
  const std::size_t ps = config_.page_size;
  const std::size_t pages = size / ps + (size % ps != 0);
  const std::size_t rounded = pages * ps;
  {
    std::shared_lock lock(regions_mutex_);
    if (rounded > config_.emulation_cap_bytes - std::min(allocated_bytes_, config_.emulation_cap_bytes)) {
      raise(Errc::kOutOfEmulatedMemory, "EPC emulation cap exceeded");
    }
  }
  auto region = std::make_shared<Region>();
  region->size = size;
  region->pages = pages;
  region->page = std::make_unique<Page[]>(pages);
  region->slab = untrusted_.allocate(pages * (ps + kSealOverhead), "epc-sealed-pages");

  std::unique_lock lock(regions_mutex_);
  if (allocated_bytes_ + rounded > config_.emulation_cap_bytes) {
    raise(Errc::kOutOfEmulatedMemory, "EPC emulation cap exceeded");
  }
  region->id = next_region_id_++;
  region->arena = this;
  allocated_bytes_ += rounded;
  regions_.emplace(region->id, region);
  return RegionHandle{region->id};
}

void EpcArena::free(RegionHandle handle) {
  std::shared_ptr<Region> doomed;
  {
    std::unique_lock lock(regions_mutex_);
    auto it = regions_.find(handle.id);
    if (it == regions_.end()) return;
    doomed = std::move(it->second);
    regions_.erase(it);
    allocated_bytes_ -= doomed->pages * config_.page_size;
  }
  // Frames return to the pool once the last in-flight visitor lets go.
}

void EpcArena::release_region(Region& region) noexcept {
  for (std::size_t p = 0; p < region.pages; ++p) {
    Page& page = region.page[p];
    std::lock_guard page_lock(page.mutex);
    if (page.frame < 0) continue;
    std::memset(frame_data(page.frame), 0, config_.page_size);
    std::lock_guard lock(frame_mutex_);
    Frame& fr = frame_meta_[page.frame];
    fr.region = nullptr;
    fr.referenced.store(0, std::memory_order_relaxed);
    lru_unlink(page.frame);
    free_frames_.push_back(page.frame);
    --resident_frames_;
    page.frame = -1;
  }
}

std::shared_ptr<EpcArena::Region> EpcArena::find(RegionHandle handle) const {
  std::shared_lock lock(regions_mutex_);
  auto it = regions_.find(handle.id);
  return it == regions_.end() ? nullptr : it->second;
}

bool EpcArena::contains(RegionHandle region) const { return find(region) != nullptr; }

std::size_t EpcArena::region_size(RegionHandle handle) const {
  auto region = find(handle);
  if (!region) raise(Errc::kInvalidArgument, "unknown EPC region");
  return region->size;
}

std::size_t EpcArena::region_pages(RegionHandle handle) const {
  auto region = find(handle);
  if (!region) raise(Errc::kInvalidArgument, "unknown EPC region");
  return region->pages;
}

std::uint8_t* EpcArena::frame_data(std::int32_t frame) const noexcept {
  return frames_.get() + static_cast<std::size_t>(frame) * config_.page_size;
}

void EpcArena::lru_unlink(std::int32_t f) noexcept {
  Frame& fr = frame_meta_[f];
  if (fr.prev >= 0) frame_meta_[fr.prev].next = fr.next;
  if (fr.next >= 0) frame_meta_[fr.next].prev = fr.prev;
  if (lru_head_ == f) lru_head_ = fr.next;
  if (lru_tail_ == f) lru_tail_ = fr.prev;
  fr.prev = fr.next = -1;
}

void EpcArena::lru_push_front(std::int32_t f) noexcept {
  Frame& fr = frame_meta_[f];
  fr.prev = -1;
  fr.next = lru_head_;
  if (lru_head_ >= 0) frame_meta_[lru_head_].prev = f;
  lru_head_ = f;
  if (lru_tail_ < 0) lru_tail_ = f;
}

std::int32_t EpcArena::obtain_frame(Region& region, std::size_t page_index) {
  std::unique_lock lock(frame_mutex_);
  for (;;) {
    if (!free_frames_.empty()) {
      const std::int32_t f = free_frames_.back();
      free_frames_.pop_back();
      frames_touched_ = std::max(frames_touched_, static_cast<std::size_t>(f) + 1);
      Frame& fr = frame_meta_[f];
      fr.region = &region;
      fr.page = page_index;
      fr.referenced.store(1, std::memory_order_relaxed);
      lru_push_front(f);
      ++resident_frames_;
      return f;
    }

    // Victims are only try-locked: their owners may be mid-access, and a
    // thread holding a page lock may be waiting on frame_mutex_.
    std::int32_t victim = -1;
    if (config_.eviction_policy == EvictionPolicy::kClock) {
      for (std::size_t step = 0; step < 2 * frame_count_ + 1 && victim < 0; ++step) {
        const auto f = static_cast<std::int32_t>(clock_hand_);
        clock_hand_ = (clock_hand_ + 1) % frame_count_;
        Frame& fr = frame_meta_[f];
        if (fr.region == nullptr) continue;
        if (fr.referenced.load(std::memory_order_relaxed) != 0) {
          fr.referenced.store(0, std::memory_order_relaxed);
          continue;
        }
        if (fr.region->page[fr.page].mutex.try_lock()) victim = f;
      }
    } else {
      for (std::int32_t f = lru_tail_; f >= 0 && victim < 0; f = frame_meta_[f].prev) {
        Frame& fr = frame_meta_[f];
        if (fr.region != nullptr && fr.region->page[fr.page].mutex.try_lock()) victim = f;
      }
    }

    if (victim < 0) {
      lock.unlock();
      std::this_thread::yield();
      lock.lock();
      continue;
    }

    Frame& fr = frame_meta_[victim];
    Region* victim_region = fr.region;
    const std::size_t victim_page = fr.page;
    Page& vp = victim_region->page[victim_page];
    vp.frame = -1;
    if (log_evictions_) eviction_log_.push_back({victim_region->id, victim_page});
    fr.region = &region;
    fr.page = page_index;
    fr.referenced.store(1, std::memory_order_relaxed);
    lru_unlink(victim);
    lru_push_front(victim);
    lock.unlock();

    // The frame now belongs to the faulting page, whose lock the caller
    // holds, so nobody else can pick it while the old contents are sealed.
    std::unique_lock victim_lock(vp.mutex, std::adopt_lock);
    seal_page(*victim_region, victim_page, frame_data(victim));
    vp.sealed = true;
    evictions_.fetch_add(1, std::memory_order_relaxed);
    seal_bytes_.fetch_add(config_.page_size + kSealOverhead, std::memory_order_relaxed);
    return victim;
  }
}

namespace {

void page_aad(std::uint64_t region, std::size_t page, std::uint8_t out[16]) {
  store_be64(out, region);
  store_be64(out + 8, page);
}

}  // namespace

void EpcArena::seal_page(Region& region, std::size_t page, const std::uint8_t* frame) {
  const std::size_t ps = config_.page_size;
  std::uint8_t* slot = region.slab.data() + page * (ps + kSealOverhead);
  Iv96 nonce;
  random_bytes(nonce);
  std::uint8_t aad[16];
  page_aad(region.id, page, aad);
  std::memcpy(slot, nonce.data(), kIvBytes);
  const Tag128 tag = gcm_seal(CipherBackend::kAccelerated, paging_key_, nonce, {aad, 16},
                              {frame, ps}, {slot + kIvBytes, ps});
  std::memcpy(slot + kIvBytes + ps, tag.data(), kTagBytes);
}

bool EpcArena::unseal_page(Region& region, std::size_t page, std::uint8_t* frame) {
  const std::size_t ps = config_.page_size;
  const std::uint8_t* slot = region.slab.data() + page * (ps + kSealOverhead);
  Iv96 nonce;
  Tag128 tag;
  std::memcpy(nonce.data(), slot, kIvBytes);
  std::memcpy(tag.data(), slot + kIvBytes + ps, kTagBytes);
  std::uint8_t aad[16];
  page_aad(region.id, page, aad);
  return gcm_open(CipherBackend::kAccelerated, paging_key_, nonce, {aad, 16},
                  {slot + kIvBytes, ps}, tag, {frame, ps});
}

std::uint8_t* EpcArena::pin(Region& region, std::size_t page_index,
                            std::unique_lock<std::mutex>& lock) {
  Page& page = region.page[page_index];
  lock = std::unique_lock(page.mutex);
  if (page.frame >= 0) {
    Frame& fr = frame_meta_[page.frame];
    if (config_.eviction_policy == EvictionPolicy::kClock) {
      fr.referenced.store(1, std::memory_order_relaxed);
    } else {
      std::lock_guard frame_lock(frame_mutex_);
      lru_unlink(page.frame);
      lru_push_front(page.frame);
    }
    return frame_data(page.frame);
  }

  const std::int32_t f = obtain_frame(region, page_index);
  std::uint8_t* data = frame_data(f);
  loads_.fetch_add(1, std::memory_order_relaxed);
  if (page.sealed) {
    unseal_bytes_.fetch_add(config_.page_size + kSealOverhead, std::memory_order_relaxed);
    if (!unseal_page(region, page_index, data)) {
      {
        std::lock_guard frame_lock(frame_mutex_);
        Frame& fr = frame_meta_[f];
        fr.region = nullptr;
        fr.referenced.store(0, std::memory_order_relaxed);
        lru_unlink(f);
        free_frames_.push_back(f);
        --resident_frames_;
      }
      raise(Errc::kIntegrityError, "sealed EPC page failed authentication on load");
    }
    page.sealed = false;
  } else {
    std::memset(data, 0, config_.page_size);
  }
  page.frame = f;
  return data;
}

void EpcArena::visit_pages(RegionHandle handle, std::size_t offset, std::size_t length,
                           bool /*writable*/, void* ctx, VisitFn fn) {
  auto region = find(handle);
  if (!region) raise(Errc::kInvalidArgument, "unknown EPC region");
  if (offset > region->size || length > region->size - offset) {
    raise(Errc::kBoundsError, "EPC access outside region");
  }
  const std::size_t ps = config_.page_size;
  std::size_t pos = offset;
  const std::size_t end = offset + length;
  while (pos < end) {
    const std::size_t page = pos / ps;
    const std::size_t in_page = pos % ps;
    const std::size_t n = std::min(ps - in_page, end - pos);
    std::unique_lock<std::mutex> lock;
    std::uint8_t* data = pin(*region, page, lock);
    fn(ctx, data + in_page, n);
    pos += n;
  }
}

void EpcArena::read(RegionHandle region, std::size_t offset, MutableByteView out) {
  std::size_t pos = 0;
  visit(region, offset, out.size(), [&](ByteView chunk) {
    std::memcpy(out.data() + pos, chunk.data(), chunk.size());
    pos += chunk.size();
  });
}

void EpcArena::write(RegionHandle region, std::size_t offset, ByteView data) {
  std::size_t pos = 0;
  visit_mut(region, offset, data.size(), [&](MutableByteView chunk) {
    std::memcpy(chunk.data(), data.data() + pos, chunk.size());
    pos += chunk.size();
  });
}

PagingStats EpcArena::paging_stats() const {
  return PagingStats{evictions_.load(), loads_.load(), seal_bytes_.load(), unseal_bytes_.load()};
}

void EpcArena::reset_paging_stats() {
  evictions_.store(0);
  loads_.store(0);
  seal_bytes_.store(0);
  unseal_bytes_.store(0);
}

std::size_t EpcArena::resident_bytes() const {
  std::lock_guard lock(frame_mutex_);
  return resident_frames_ * config_.page_size;
}

std::size_t EpcArena::allocated_bytes() const {
  std::shared_lock lock(regions_mutex_);
  return allocated_bytes_;
}

void EpcArena::set_eviction_log(bool enabled) {
  std::lock_guard lock(frame_mutex_);
  log_evictions_ = enabled;
  eviction_log_.clear();
}

std::vector<PageKey> EpcArena::eviction_log() const {
  std::lock_guard lock(frame_mutex_);
  return eviction_log_;
}

bool EpcArena::is_resident(RegionHandle handle, std::size_t page) const {
  auto region = find(handle);
  if (!region || page >= region->pages) raise(Errc::kBoundsError, "no such EPC page");
  std::lock_guard lock(region->page[page].mutex);
  return region->page[page].frame >= 0;
}

MutableByteView EpcArena::sealed_slot(RegionHandle handle, std::size_t page) {
  auto region = find(handle);
  if (!region || page >= region->pages) raise(Errc::kBoundsError, "no such EPC page");
  const std::size_t slot = config_.page_size + kSealOverhead;
  return region->slab.span().subspan(page * slot, slot);
}

}  // namespace encdp
