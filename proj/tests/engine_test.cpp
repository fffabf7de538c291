#include "encdp/crypto_engine.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include "gcm_kat.hpp"
#include "test_util.hpp"

namespace encdp {
namespace {

using testing::error_code;
using testing::fixed;
using testing::kKat;

constexpr std::size_t kMiB = std::size_t{1} << 20;

Bytes random_bytes_seeded(std::size_t n, std::uint64_t seed) {
  Bytes out(n);
  std::mt19937_64 rng(seed);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

struct Engine : ::testing::TestWithParam<CipherBackend> {
  UntrustedArena untrusted;
  EpcArena epc{untrusted};
  CallGate gate{epc};
  TrustedChannel channel{gate};
  CryptoEngine engine{gate, EngineConfig{GetParam()}};

  KeyId install(const Key128& key) {
    ClientChannel client;
    auto session = channel.accept(client.hello());
    client.complete(session->server_hello());
    return engine.install_key(*session, client.send(key));
  }

  Key128 peek_key(KeyId id) {
    const auto slot = engine.key_slot(id);
    Key128 key;
    epc.read(slot.region, slot.offset, key);
    return key;
  }
};

TEST_P(Engine, KnownAnswerVectors) {
  for (const auto& c : kKat) {
    const KeyId id = install(fixed<16>(c.key));
    const Iv96 iv = fixed<12>(c.iv);
    const Bytes pt = from_hex(c.plaintext), aad = from_hex(c.aad);
    Bytes ct(pt.size());
    const RecordHeader h = engine.encrypt_with_iv(id, iv, pt, ct, aad);
    EXPECT_EQ(to_hex(ct), c.ciphertext);
    EXPECT_EQ(to_hex(h.tag), c.tag);
    Bytes back(pt.size());
    engine.decrypt(id, h, ct, aad, back);
    EXPECT_EQ(back, pt);
  }
}

TEST_P(Engine, EmptyPlaintextAuthenticatesAad) {
  const testing::KatCase* row = nullptr;
  for (const auto& c : kKat) {
    if (std::string_view(c.plaintext).empty() && !std::string_view(c.aad).empty()) row = &c;
  }
  ASSERT_NE(row, nullptr);
  const KeyId id = install(fixed<16>(row->key));
  const Bytes aad = from_hex(row->aad);
  Bytes ct;
  const RecordHeader h = engine.encrypt_with_iv(id, fixed<12>(row->iv), {}, ct, aad);
  EXPECT_EQ(to_hex(h.tag), row->tag);
  Bytes wrong_aad = aad;
  wrong_aad[0] ^= 1;
  EXPECT_EQ(error_code([&] { engine.decrypt(id, h, {}, wrong_aad, {}); }), Errc::kAuthError);
  EXPECT_NO_THROW(engine.decrypt(id, h, {}, aad, {}));
}

TEST_P(Engine, RoundTripOneMiB) {
  const KeyId id = engine.generate_key();
  const Bytes pt = random_bytes_seeded(kMiB, 1);
  const Bytes aad = {1, 2, 3};
  const SealedRecord rec = engine.encrypt(id, pt, aad);
  EXPECT_EQ(rec.ciphertext.size(), pt.size());
  EXPECT_EQ(rec.serialize().size(), pt.size() + 28);
  EXPECT_NE(rec.ciphertext, pt);
  EXPECT_EQ(engine.decrypt(id, SealedRecord::parse(rec.serialize()), aad), pt);
}

TEST_P(Engine, LocalRoundTrip) {
  const KeyId id = engine.generate_key();
  const Bytes pt = random_bytes_seeded(kMiB + 123, 2);
  EpcRegion in(epc, pt.size());
  epc.write(in.handle(), 0, pt);
  Bytes ct(pt.size() - 100);
  const RecordHeader h = engine.encrypt_local(id, in.handle(), 100, ct.size(), ct, {});
  EpcRegion out(epc, pt.size());
  engine.decrypt_local(id, h, ct, {}, out.handle(), 0);
  Bytes back(ct.size());
  epc.read(out.handle(), 0, back);
  EXPECT_TRUE(std::equal(back.begin(), back.end(), pt.begin() + 100));
  // Cross-placement: the local ciphertext opens in place too.
  Bytes back2(ct.size());
  engine.decrypt(id, h, ct, {}, back2);
  EXPECT_EQ(back2, back);
}

TEST_P(Engine, TamperAndWrongAadRejected) {
  const KeyId id = engine.generate_key();
  const Bytes pt = random_bytes_seeded(4096, 3);
  const Bytes aad = {9, 9, 9, 9};
  const SealedRecord rec = engine.encrypt(id, pt, aad);
  std::mt19937_64 rng(4);
  const Bytes wire = rec.serialize();
  for (int i = 0; i < 200; ++i) {
    Bytes bad = wire;
    const std::size_t bit = rng() % (bad.size() * 8);
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    const SealedRecord r = SealedRecord::parse(bad);
    Bytes out(pt.size(), 0x5A);
    ASSERT_EQ(error_code([&] { engine.decrypt(id, r.header(), r.ciphertext, aad, out); }), Errc::kAuthError);
    ASSERT_EQ(out, Bytes(pt.size(), 0x5A)) << "partial plaintext released";
  }
  EXPECT_EQ(error_code([&] { engine.decrypt(id, rec, Bytes{9, 9, 9}); }), Errc::kAuthError);
  // Decrypting into the trusted arena fails the same way.
  EpcRegion dst(epc, pt.size());
  Bytes bad_ct = rec.ciphertext;
  bad_ct[17] ^= 0x80;
  EXPECT_EQ(error_code([&] { engine.decrypt_local(id, rec.header(), bad_ct, aad, dst.handle(), 0); }),
            Errc::kAuthError);
}

TEST_P(Engine, UnknownKeyAndBadHandle) {
  Bytes pt(64), ct(64);
  EXPECT_EQ(error_code([&] { engine.encrypt(12345, pt, ct, {}); }), Errc::kUnknownKey);
  EXPECT_EQ(error_code([&] { engine.decrypt(0, RecordHeader{}, ct, {}, pt); }), Errc::kUnknownKey);
  const KeyId id = engine.generate_key();
  EXPECT_EQ(error_code([&] { engine.encrypt_local(id, RegionHandle{987654}, 0, 64, ct, {}); }),
            Errc::kPlacementViolation);
  EpcRegion small(epc, 32);
  EXPECT_EQ(error_code([&] { engine.encrypt_local(id, small.handle(), 0, 64, ct, {}); }),
            Errc::kPlacementViolation);
}

TEST_P(Engine, OneTransitionPerOperation) {
  const KeyId id = engine.generate_key();
  Bytes pt(3 * kMiB), ct(3 * kMiB);
  gate.reset_stats();
  engine.encrypt(id, pt, ct, {});
  EXPECT_EQ(gate.stats().calls, 1u);
  EXPECT_EQ(gate.stats().bytes_copied_in, 0u);
}

TEST_P(Engine, SizeCap) {
  CryptoEngine capped(gate, EngineConfig{GetParam(), kMiB});
  const KeyId id = capped.generate_key();
  Bytes pt(kMiB + 1), ct(kMiB + 1);
  EXPECT_EQ(error_code([&] { capped.encrypt(id, pt, ct, {}); }), Errc::kInvalidArgument);
  EXPECT_EQ(CryptoEngine(gate).config().max_plaintext, 256 * kMiB);
}

TEST_P(Engine, CancellationBetweenChunks) {
  const KeyId id = engine.generate_key();
  Bytes pt(4 * kMiB), ct(4 * kMiB);
  std::stop_source stop;
  stop.request_stop();
  EXPECT_EQ(error_code([&] { engine.encrypt(id, pt, ct, {}, OpControl{stop.get_token()}); }), Errc::kCancelled);
  EpcRegion r(epc, pt.size());
  EXPECT_EQ(error_code([&] { engine.encrypt_local(id, r.handle(), 0, pt.size(), ct, {}, OpControl{stop.get_token()}); }),
            Errc::kCancelled);
}

TEST_P(Engine, ProgressCountsCompletedBytes) {
  const KeyId id = engine.generate_key();
  Bytes pt(3 * kMiB + 5), ct(3 * kMiB + 5);
  std::uint64_t progress = 0;
  engine.encrypt(id, pt, ct, {}, OpControl{{}, &progress});
  EXPECT_EQ(progress, pt.size());
  EpcRegion r(epc, pt.size());
  progress = 0;
  engine.encrypt_local(id, r.handle(), 0, pt.size(), ct, {}, OpControl{{}, &progress});
  EXPECT_EQ(progress, pt.size());
}

TEST_P(Engine, InstalledKeyMatchesDirectEncryption) {
  const Key128 key = fixed<16>("000102030405060708090a0b0c0d0e0f");
  const KeyId id = install(key);
  const Iv96 iv = fixed<12>("cafebabefacedbaddecaf888");
  const Bytes pt = random_bytes_seeded(1000, 5);
  Bytes via_engine(pt.size()), direct(pt.size());
  const RecordHeader h = engine.encrypt_with_iv(id, iv, pt, via_engine, {});
  const Tag128 tag = gcm_seal(GetParam(), key, iv, {}, pt, direct);
  EXPECT_EQ(via_engine, direct);
  EXPECT_EQ(h.tag, tag);
  EXPECT_FALSE(untrusted.scan(key).found);
}

TEST_P(Engine, TamperedWrappedKeyRejected) {
  ClientChannel client;
  auto session = channel.accept(client.hello());
  client.complete(session->server_hello());
  Bytes wrapped = client.send(fixed<16>("00112233445566778899aabbccddeeff"));
  wrapped[25] ^= 1;
  const std::size_t before = engine.key_count();
  EXPECT_EQ(error_code([&] { engine.install_key(*session, wrapped); }), Errc::kKeyInstallRejected);
  EXPECT_EQ(engine.key_count(), before);
  const Bytes short_payload = client.send(Bytes(8, 1));
  EXPECT_EQ(error_code([&] { engine.install_key(*session, short_payload); }), Errc::kKeyInstallRejected);
  EXPECT_EQ(engine.key_count(), before);
}

INSTANTIATE_TEST_SUITE_P(Backends, Engine,
                         ::testing::Values(CipherBackend::kAccelerated, CipherBackend::kPortable),
                         [](const auto& info) { return std::string(backend_name(info.param)); });

using EngineKeys = Engine;

TEST_P(EngineKeys, GeneratedKeysDistinctAndConfined) {
  const KeyId a = engine.generate_key();
  const KeyId b = engine.generate_key();
  EXPECT_NE(a, b);
  std::set<Key128> seen;
  for (int i = 0; i < 1000; ++i) {
    const KeyId id = engine.generate_key();
    seen.insert(peek_key(id));
  }
  EXPECT_EQ(seen.size(), 1000u);
  // Exercise the keys, then look for every one of them in untrusted memory.
  Bytes pt = random_bytes_seeded(8192, 6), ct(8192);
  for (KeyId id = 1; id <= 50; ++id) engine.encrypt(id, pt, ct, {});
  for (const Key128& k : seen) ASSERT_FALSE(untrusted.scan(k).found);
  EXPECT_FALSE(untrusted.scan(peek_key(a)).found);
}

INSTANTIATE_TEST_SUITE_P(Backends, EngineKeys, ::testing::Values(CipherBackend::kAccelerated),
                         [](const auto& info) { return std::string(backend_name(info.param)); });

// Page faults during a streaming encryption seal and unseal pages with the
// same backend; they must not disturb the stream in progress.
TEST(EnginePaging, LocalEncryptionLargerThanBudget) {
  for (CipherBackend backend : {CipherBackend::kAccelerated, CipherBackend::kPortable}) {
    UntrustedArena untrusted;
    EpcArena epc(untrusted, EpcConfig{.budget_bytes = 64 * 4096});
    CallGate gate(epc);
    CryptoEngine engine(gate, EngineConfig{backend});
    const KeyId id = engine.generate_key();
    const Bytes pt = random_bytes_seeded(1 * kMiB, 11);
    EpcRegion r(epc, pt.size());
    epc.write(r.handle(), 0, pt);
    Bytes ct(pt.size());
    const RecordHeader h = engine.encrypt_local(id, r.handle(), 0, pt.size(), ct, {});
    EXPECT_GT(epc.paging_stats().evictions, 0u);
    Bytes back(pt.size());
    engine.decrypt(id, h, ct, {}, back);
    EXPECT_EQ(back, pt) << backend_name(backend);
  }
}

TEST(EngineKeyPaging, EvictedKeyPageStaysSealed) {
  UntrustedArena untrusted;
  EpcConfig cfg;
  cfg.budget_bytes = 64 * 4096;
  EpcArena epc(untrusted, cfg);
  CallGate gate(epc);
  CryptoEngine engine(gate);
  const KeyId id = engine.generate_key();
  const auto slot = engine.key_slot(id);
  Key128 key;
  epc.read(slot.region, slot.offset, key);
  // Push the key page out with a trusted buffer larger than the budget.
  EpcRegion big(epc, 128 * 4096);
  epc.visit_mut(big.handle(), 0, big.size(), [](MutableByteView p) { std::fill(p.begin(), p.end(), 1); });
  ASSERT_FALSE(epc.is_resident(slot.region, 0));
  EXPECT_FALSE(untrusted.scan(key).found);
  // And it still works after being paged back in.
  Bytes pt(100, 7), ct(100);
  const RecordHeader h = engine.encrypt(id, pt, ct, {});
  Bytes back(100);
  engine.decrypt(id, h, ct, {}, back);
  EXPECT_EQ(back, pt);
}

TEST(EngineNonces, FourThreadsTenThousandEach) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted);
  CallGate gate(epc);
  CryptoEngine engine(gate);
  const KeyId id = engine.generate_key();
  constexpr int kThreads = 4, kOps = 10'000;
  std::vector<std::vector<std::pair<std::uint32_t, std::uint64_t>>> seen(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      Bytes pt(64, static_cast<std::uint8_t>(t)), ct(64);
      for (int i = 0; i < kOps; ++i) {
        const RecordHeader h = engine.encrypt(id, pt, ct, {});
        seen[t].emplace_back(iv_lane(h.iv), iv_counter(h.iv));
      }
    });
  }
  for (auto& t : threads) t.join();
  std::set<std::pair<std::uint32_t, std::uint64_t>> all;
  for (const auto& v : seen) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), std::size_t{kThreads} * kOps);
  // Each thread stays on one lane.
  for (const auto& v : seen) {
    std::set<std::uint32_t> lanes;
    for (const auto& [lane, ctr] : v) lanes.insert(lane);
    EXPECT_EQ(lanes.size(), 1u);
  }
}

TEST(EngineBackends, IdenticalRecords) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted);
  CallGate gate(epc);
  TrustedChannel channel(gate);
  CryptoEngine fast(gate, EngineConfig{CipherBackend::kAccelerated});
  CryptoEngine slow(gate, EngineConfig{CipherBackend::kPortable});
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Key128 key;
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    ClientChannel client;
    auto session = channel.accept(client.hello());
    client.complete(session->server_hello());
    const KeyId kf = fast.install_key(*session, client.send(key));
    const KeyId ks = slow.install_key(*session, client.send(key));
    Iv96 iv;
    for (auto& b : iv) b = static_cast<std::uint8_t>(rng());
    const Bytes pt = random_bytes_seeded(rng() % 5000, trial);
    const Bytes aad = random_bytes_seeded(rng() % 40, trial + 1000);
    Bytes c1(pt.size()), c2(pt.size());
    EXPECT_EQ(fast.encrypt_with_iv(kf, iv, pt, c1, aad), slow.encrypt_with_iv(ks, iv, pt, c2, aad));
    EXPECT_EQ(c1, c2);
  }
}

TEST(EngineConcurrency, SharedKeyRoundTrips) {
  UntrustedArena untrusted;
  EpcArena epc(untrusted);
  CallGate gate(epc);
  CryptoEngine engine(gate);
  const KeyId shared = engine.generate_key();
  std::atomic<int> failures{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      const KeyId own = engine.generate_key();
      for (int i = 0; i < 200; ++i) {
        const Bytes pt = random_bytes_seeded(1 + (i * 37) % 20'000, t * 1000 + i);
        const KeyId id = i % 2 ? shared : own;
        if (engine.decrypt(id, engine.encrypt(id, pt, {}), {}) != pt) ++failures;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(failures.load(), 0);
}

}  // namespace
}  // namespace encdp
