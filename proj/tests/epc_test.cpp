#include "encdp/epc.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "encdp/error.hpp"
#include "paging_reference.hpp"
#include "test_util.hpp"

namespace encdp {
namespace {

constexpr std::size_t kPage = 4096;
constexpr std::size_t kMiB = std::size_t{1} << 20;

using testing::error_code;

EpcConfig small_config(std::size_t frames, EvictionPolicy policy = EvictionPolicy::kClock) {
  EpcConfig cfg;
  cfg.budget_bytes = frames * kPage;
  cfg.page_size = kPage;
  cfg.eviction_policy = policy;
  return cfg;
}

void touch_sequential(EpcArena& epc, RegionHandle r) {
  epc.visit(r, 0, epc.region_size(r), [](ByteView) {});
}

TEST(EpcConfig, BudgetMustBePageMultiple) {
  EpcConfig cfg;
  cfg.budget_bytes = 4097;
  EXPECT_EQ(error_code([&] { cfg.validate(); }), Errc::kInvalidArgument);
  cfg.budget_bytes = 0;
  EXPECT_EQ(error_code([&] { cfg.validate(); }), Errc::kInvalidArgument);
  EXPECT_NO_THROW(EpcConfig{}.validate());
  EXPECT_EQ(EpcConfig{}.budget_bytes, 100'663'296u);
}

TEST(EpcAlloc, RegionRoundsUpToPages) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(16));
  const RegionHandle r = epc.alloc(8 * 1024);
  EXPECT_EQ(epc.region_pages(r), 2u);
  EXPECT_EQ(epc.region_pages(epc.alloc(8 * 1024 + 1)), 3u);
}

TEST(EpcAlloc, ZeroBytesRejected) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(16));
  EXPECT_EQ(error_code([&] { epc.alloc(0); }), Errc::kInvalidArgument);
}

TEST(EpcAlloc, EmulationCapEnforced) {
  UntrustedArena untrusted;
  EpcConfig cfg = small_config(16);
  cfg.emulation_cap_bytes = 64 * kPage;
  EpcArena epc(untrusted, cfg);
  const RegionHandle a = epc.alloc(60 * kPage);
  EXPECT_EQ(error_code([&] { epc.alloc(5 * kPage); }), Errc::kOutOfEmulatedMemory);
  epc.free(a);
  EXPECT_NO_THROW(epc.alloc(64 * kPage));
}

TEST(EpcAccess, OutOfBounds) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(4));
  const RegionHandle r = epc.alloc(3 * kPage);
  Bytes buf(16);
  EXPECT_EQ(error_code([&] { epc.read(r, 3 * kPage - 8, buf); }), Errc::kBoundsError);
  EXPECT_EQ(error_code([&] { epc.write(r, SIZE_MAX - 4, buf); }), Errc::kBoundsError);
  EXPECT_NO_THROW(epc.read(r, 3 * kPage - 16, buf));
}

TEST(EpcStats, FreshArenaIsZero) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(4));
  EXPECT_EQ(epc.paging_stats(), PagingStats{});
  EXPECT_EQ(epc.resident_bytes(), 0u);
}

TEST(EpcPaging, WorkingSetInsideBudgetNeverEvicts) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, EpcConfig{});
  const RegionHandle r = epc.alloc(64 * kMiB);
  touch_sequential(epc, r);
  touch_sequential(epc, r);
  EXPECT_EQ(epc.paging_stats().evictions, 0u);
  EXPECT_EQ(epc.paging_stats().loads, 64 * kMiB / kPage);
}

TEST(EpcPaging, AboveBudgetTwoPassLruMatchesReference) {
  UntrustedArena untrusted;
  EpcConfig cfg;
  cfg.eviction_policy = EvictionPolicy::kLru;
  EpcArena epc(untrusted, cfg);
  const RegionHandle r = epc.alloc(128 * kMiB);
  const std::size_t pages = 128 * kMiB / kPage;

  touch_sequential(epc, r);
  EXPECT_LE(epc.resident_bytes(), cfg.budget_bytes);
  const std::uint64_t first_pass = epc.paging_stats().evictions;
  touch_sequential(epc, r);
  const PagingStats stats = epc.paging_stats();
  EXPECT_GE(stats.evictions - first_pass, 8192u);
  EXPECT_GE(stats.loads, stats.evictions);
  EXPECT_EQ(stats.seal_bytes, stats.evictions * (kPage + kSealOverhead));

  std::vector<std::uint64_t> trace;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t p = 0; p < pages; ++p) trace.push_back(p);
  }
  const auto ref = testing::simulate_lru(trace, cfg.budget_bytes / kPage);
  EXPECT_EQ(stats.evictions, ref.evicted.size());
  EXPECT_EQ(stats.loads, ref.faults);
  EXPECT_LE(epc.resident_bytes(), cfg.budget_bytes);
}

TEST(EpcPaging, TamperedSealedPageFailsClosed) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(2));
  const RegionHandle r = epc.alloc(4 * kPage);
  Bytes page(kPage, 0x5A);
  for (std::size_t p = 0; p < 4; ++p) epc.write(r, p * kPage, page);
  ASSERT_FALSE(epc.is_resident(r, 0));
  epc.sealed_slot(r, 0)[kIvBytes + 100] ^= 0x01;
  Bytes out(kPage);
  EXPECT_EQ(error_code([&] { epc.read(r, 0, out); }), Errc::kIntegrityError);
  // Still rejected on retry, and the failed load did not leak a frame.
  EXPECT_EQ(error_code([&] { epc.read(r, 0, out); }), Errc::kIntegrityError);
  EXPECT_NO_THROW(epc.read(r, 3 * kPage, out));
}

TEST(EpcPaging, SealedPagesAreBoundToTheirSlot) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(1));
  const RegionHandle r = epc.alloc(3 * kPage);
  epc.write(r, 0, Bytes(kPage, 1));
  epc.write(r, kPage, Bytes(kPage, 2));
  epc.write(r, 2 * kPage, Bytes(kPage, 3));
  auto a = epc.sealed_slot(r, 0);
  auto b = epc.sealed_slot(r, 1);
  std::swap_ranges(a.begin(), a.end(), b.begin());
  Bytes out(kPage);
  EXPECT_EQ(error_code([&] { epc.read(r, 0, out); }), Errc::kIntegrityError);
}

TEST(EpcProperty, BudgetHoldsAcrossRandomOperations) {
  UntrustedArena untrusted;
  const std::size_t frames = 32;
  EpcArena epc(untrusted, small_config(frames));
  std::mt19937_64 rng(11);
  std::vector<RegionHandle> live;
  Bytes scratch(3 * kPage);
  for (int op = 0; op < 10'000; ++op) {
    const int kind = static_cast<int>(rng() % 10);
    if (live.empty() || kind == 0) {
      live.push_back(epc.alloc(1 + rng() % (24 * kPage)));
    } else if (kind == 1 && live.size() > 1) {
      const std::size_t i = rng() % live.size();
      epc.free(live[i]);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      const RegionHandle r = live[rng() % live.size()];
      const std::size_t size = epc.region_size(r);
      const std::size_t off = rng() % size;
      const std::size_t len = std::min<std::size_t>(size - off, 1 + rng() % scratch.size());
      if (kind % 2 == 0) {
        epc.write(r, off, ByteView(scratch).first(len));
      } else {
        epc.read(r, off, MutableByteView(scratch).first(len));
      }
    }
    ASSERT_LE(epc.resident_bytes(), frames * kPage) << "after op " << op;
  }
}

TEST(EpcProperty, EvictThenLoadRoundTrips) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(8));
  std::mt19937_64 rng(5);
  const std::size_t pages = 64;
  const RegionHandle r = epc.alloc(pages * kPage);
  std::vector<Bytes> expected(pages, Bytes(kPage));
  for (std::size_t p = 0; p < pages; ++p) {
    for (auto& b : expected[p]) b = static_cast<std::uint8_t>(rng());
    epc.write(r, p * kPage, expected[p]);
  }
  EXPECT_GT(epc.paging_stats().evictions, 0u);
  Bytes out(kPage);
  for (int i = 0; i < 500; ++i) {
    const std::size_t p = rng() % pages;
    epc.read(r, p * kPage, out);
    ASSERT_EQ(out, expected[p]) << "page " << p;
  }
}

class EvictionOrder : public ::testing::TestWithParam<EvictionPolicy> {};

TEST_P(EvictionOrder, MatchesReferenceSimulator) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    UntrustedArena untrusted;
    const std::size_t frames = 16;
    EpcArena epc(untrusted, small_config(frames, GetParam()));
    const std::size_t pages = 48;
    const RegionHandle r = epc.alloc(pages * kPage);
    epc.set_eviction_log(true);

    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> trace;
    Bytes one(1);
    for (int i = 0; i < 5000; ++i) {
      // Skewed trace so hits, second chances and misses all occur.
      const std::uint64_t p = (rng() % 4 == 0) ? rng() % pages : rng() % (frames + 4);
      trace.push_back(p);
      epc.read(r, p * kPage + rng() % kPage, one);
    }
    const auto ref = GetParam() == EvictionPolicy::kLru ? testing::simulate_lru(trace, frames)
                                                        : testing::simulate_clock(trace, frames);
    std::vector<std::uint64_t> got;
    for (const PageKey& k : epc.eviction_log()) {
      ASSERT_EQ(k.region, r.id);
      got.push_back(k.page);
    }
    EXPECT_EQ(got, ref.evicted) << "seed " << seed;
    EXPECT_EQ(epc.paging_stats().loads, ref.faults);
  }
}

INSTANTIATE_TEST_SUITE_P(Policies, EvictionOrder,
                         ::testing::Values(EvictionPolicy::kClock, EvictionPolicy::kLru),
                         [](const auto& info) {
                           return info.param == EvictionPolicy::kClock ? "clock" : "lru";
                         });

TEST(EpcConcurrency, ParallelFaultsOnDistinctPagesKeepData) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(8));
  const int threads = 4;
  const std::size_t pages_per_thread = 16;
  std::vector<RegionHandle> regions;
  for (int t = 0; t < threads; ++t) regions.push_back(epc.alloc(pages_per_thread * kPage));

  std::vector<std::thread> workers;
  std::atomic<int> failures{0};
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      Bytes page(kPage), out(kPage);
      for (int round = 0; round < 20; ++round) {
        for (std::size_t p = 0; p < pages_per_thread; ++p) {
          std::fill(page.begin(), page.end(), static_cast<std::uint8_t>(t * 31 + p + round));
          epc.write(regions[t], p * kPage, page);
        }
        for (std::size_t p = 0; p < pages_per_thread; ++p) {
          epc.read(regions[t], p * kPage, out);
          if (out[0] != static_cast<std::uint8_t>(t * 31 + p + round) || out[kPage - 1] != out[0]) {
            ++failures;
          }
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  EXPECT_EQ(failures.load(), 0);
  EXPECT_LE(epc.resident_bytes(), 8 * kPage);
}

TEST(EpcFree, ReturnsFrames) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(4));
  const RegionHandle a = epc.alloc(4 * kPage);
  touch_sequential(epc, a);
  EXPECT_EQ(epc.resident_bytes(), 4 * kPage);
  epc.free(a);
  EXPECT_EQ(epc.resident_bytes(), 0u);
  EXPECT_FALSE(epc.contains(a));
  const RegionHandle b = epc.alloc(4 * kPage);
  touch_sequential(epc, b);
  EXPECT_EQ(epc.paging_stats().evictions, 0u);
}

TEST(UntrustedScan, FindsPlantedPattern) {
  UntrustedArena untrusted;
  UntrustedBuffer buf = untrusted.allocate(4096, "plant");
  Bytes needle(16);
  std::mt19937_64 rng(3);
  for (auto& b : needle) b = static_cast<std::uint8_t>(rng());
  std::copy(needle.begin(), needle.end(), buf.data() + 1000);
  const ScanResult r = untrusted.scan(needle);
  ASSERT_TRUE(r.found);
  ASSERT_EQ(r.locations.size(), 1u);
  EXPECT_EQ(r.locations[0].offset, 1000u);
  EXPECT_EQ(r.locations[0].buffer_id, buf.id());
  EXPECT_EQ(r.locations[0].label, "plant");
}

TEST(UntrustedScan, ShortNeedleRejected) {
  UntrustedArena untrusted;
  Bytes needle(15, 1);
  EXPECT_EQ(error_code([&] { untrusted.scan(needle); }), Errc::kInvalidArgument);
}

TEST(UntrustedArena, CapacityBounded) {
  UntrustedArena untrusted(1024);
  UntrustedBuffer a = untrusted.allocate(1000);
  EXPECT_EQ(error_code([&] { untrusted.allocate(100); }), Errc::kOutOfEmulatedMemory);
  a = UntrustedBuffer{};
  EXPECT_EQ(untrusted.used_bytes(), 0u);
  EXPECT_NO_THROW(untrusted.allocate(1024));
}

TEST(EpcConfidentiality, SecretsInTrustedArenaNeverSurfaceUntrusted) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted, small_config(4));
  const RegionHandle r = epc.alloc(16 * kPage);
  std::mt19937_64 rng(99);
  Bytes secret(16);
  for (int trial = 0; trial < 1000; ++trial) {
    for (auto& b : secret) b = static_cast<std::uint8_t>(rng());
    const std::size_t page = rng() % 16;
    epc.write(r, page * kPage + rng() % (kPage - 16), secret);
    // Sweep other pages so the secret's page is usually evicted.
    for (std::size_t p = 0; p < 16; p += 3) epc.read(r, p * kPage, MutableByteView(secret).first(0));
    epc.visit(r, ((page + 8) % 16) * kPage, kPage, [](ByteView) {});
    ASSERT_FALSE(untrusted.scan(secret).found) << "trial " << trial;
  }
  EXPECT_GT(epc.paging_stats().evictions, 0u);
}

}  // namespace
}  // namespace encdp
