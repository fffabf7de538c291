#include "encdp/secure_channel.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "test_util.hpp"

namespace encdp {
namespace {

using testing::error_code;

Bytes random_payload(std::size_t n, std::uint64_t seed) {
  Bytes out(n);
  std::mt19937_64 rng(seed);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

Bytes read_region(EpcArena& epc, const EpcRegion& r) {
  Bytes out(r.size());
  if (!out.empty()) epc.read(r.handle(), 0, out);
  return out;
}

struct Channel : ::testing::Test {
  UntrustedArena untrusted;
  EpcArena epc{untrusted};
  CallGate gate{epc};
  TrustedChannel server{gate};

  std::pair<ClientChannel, std::unique_ptr<TrustedSession>> connect() {
    ClientChannel client;
    auto session = server.accept(client.hello());
    client.complete(session->server_hello());
    return {std::move(client), std::move(session)};
  }
};

TEST(KeySchedule, BothSidesDeriveSameKeys) {
  const EphemeralKey a = EphemeralKey::generate();
  const EphemeralKey b = EphemeralKey::generate();
  std::uint8_t ab[32], ba[32];
  a.agree(b.public_key(), {ab, 32});
  b.agree(a.public_key(), {ba, 32});
  EXPECT_EQ(0, std::memcmp(ab, ba, 32));
  EXPECT_EQ(derive_session_keys({ab, 32}, a.public_key(), b.public_key()),
            derive_session_keys({ba, 32}, a.public_key(), b.public_key()));
}

TEST(KeySchedule, MatchesIndependentHkdf) {
  // Frozen from tests/oracles/hkdf_reference.py.
  Bytes shared(32);
  for (int i = 0; i < 32; ++i) shared[i] = static_cast<std::uint8_t>(i);
  GroupElement client_pub, server_pub;
  client_pub.fill(0x11);
  server_pub.fill(0x22);
  const SessionKeys keys = derive_session_keys(shared, client_pub, server_pub);
  EXPECT_EQ(to_hex(keys.client_to_server), "765b6a76ed78112192b48c8c6484b4a1");
  EXPECT_EQ(to_hex(keys.server_to_client), "4201bf6405b96b3ffba78b1a8acb23fa");
}

TEST(KeySchedule, LowOrderElementsRejected) {
  const EphemeralKey k = EphemeralKey::generate();
  std::uint8_t shared[32];
  const char* low_order[] = {
      "0000000000000000000000000000000000000000000000000000000000000000",
      "0100000000000000000000000000000000000000000000000000000000000000",
      "e0eb7a7c3b41b8ae1656e3faf19fc46ada098deb9c32b1fd866205165f49b800",
      "5f9c95bca3508c24b1d0b1559c83ef5b04445cc4581c8e86d8224eddd09f1157",
      "ecffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff7f",
  };
  for (const char* hex : low_order) {
    GroupElement e;
    const Bytes raw = from_hex(hex);
    std::copy(raw.begin(), raw.end(), e.begin());
    EXPECT_EQ(error_code([&] { k.agree(e, {shared, 32}); }), Errc::kHandshakeError) << hex;
  }
}

TEST(HelloFraming, LengthPrefixed) {
  GroupElement e;
  e.fill(0xAA);
  const Bytes hello = encode_hello(e);
  ASSERT_EQ(hello.size(), 34u);
  EXPECT_EQ(hello[0], 0x00);
  EXPECT_EQ(hello[1], 0x20);
  EXPECT_EQ(decode_hello(hello), e);
  EXPECT_EQ(error_code([&] { decode_hello(ByteView(hello).first(33)); }), Errc::kHandshakeError);
  Bytes bad = hello;
  bad[1] = 31;
  EXPECT_EQ(error_code([&] { decode_hello(bad); }), Errc::kHandshakeError);
}

TEST_F(Channel, HandshakeAgreesAndRoundTrips) {
  auto [client, session] = connect();
  const Bytes payload = random_payload(64 * 1024, 1);
  const Bytes record = client.send(payload);
  ASSERT_EQ(record.size(), payload.size() + kRecordOverhead);
  EXPECT_EQ(load_be64(record.data()), 0u);
  const EpcRegion plain = session->trusted_recv(record);
  EXPECT_TRUE(epc.contains(plain.handle()));
  EXPECT_EQ(read_region(epc, plain), payload);
}

TEST_F(Channel, HandshakeFailsOnLowOrderClient) {
  Bytes hello(34, 0);
  hello[1] = 32;
  EXPECT_EQ(error_code([&] { server.accept(hello); }), Errc::kHandshakeError);
}

TEST_F(Channel, TwoHandshakesDistinctKeys) {
  auto [c1, s1] = connect();
  auto [c2, s2] = connect();
  EXPECT_NE(c1.keys().client_to_server, c2.keys().client_to_server);
  EXPECT_NE(c1.keys().server_to_client, c2.keys().server_to_client);
  EXPECT_NE(c1.keys().client_to_server, c1.keys().server_to_client);
  // A record for one session does not open in the other.
  const Bytes rec = c1.send(random_payload(100, 2));
  EXPECT_EQ(error_code([&] { s2->trusted_recv(rec); }), Errc::kRecordRejected);
}

TEST_F(Channel, ServerKeysNeverInUntrustedArena) {
  auto [client, session] = connect();
  // Client keys are in client memory; the arena must not hold them.
  Bytes both(client.keys().client_to_server.begin(), client.keys().client_to_server.end());
  EXPECT_FALSE(untrusted.scan(both).found);
  Bytes s2c(client.keys().server_to_client.begin(), client.keys().server_to_client.end());
  EXPECT_FALSE(untrusted.scan(s2c).found);
}

TEST_F(Channel, ReplayRejectedWithoutAdvancing) {
  auto [client, session] = connect();
  const Bytes r0 = client.send(random_payload(32, 3));
  const Bytes r1 = client.send(random_payload(32, 4));
  const Bytes r2 = client.send(random_payload(32, 5));
  session->trusted_recv(r0);
  EXPECT_EQ(error_code([&] { session->trusted_recv(r0); }), Errc::kRecordRejected);
  session->trusted_recv(r2);  // gaps are allowed, order is not
  EXPECT_EQ(error_code([&] { session->trusted_recv(r1); }), Errc::kRecordRejected);

  // A forged record must not move the window forward.
  auto [c2, s2] = connect();
  Bytes forged = c2.send(random_payload(32, 6));
  const Bytes good = c2.send(random_payload(32, 7));
  store_be64(forged.data(), 1000);
  EXPECT_EQ(error_code([&] { s2->trusted_recv(forged); }), Errc::kRecordRejected);
  EXPECT_NO_THROW(s2->trusted_recv(good));
}

TEST_F(Channel, EverySingleBitFlipRejected) {
  auto [client, session] = connect();
  const Bytes payload = random_payload(40, 8);
  const Bytes record = client.send(payload);
  for (std::size_t bit = 0; bit < record.size() * 8; ++bit) {
    Bytes bad = record;
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    ASSERT_EQ(error_code([&] { session->trusted_recv(bad); }), Errc::kRecordRejected) << "bit " << bit;
  }
  EXPECT_EQ(read_region(epc, session->trusted_recv(record)), payload);
  EXPECT_EQ(error_code([&] { session->trusted_recv(ByteView(record).first(kRecordOverhead - 1)); }),
            Errc::kRecordRejected);
}

TEST_F(Channel, RoundTripSizes) {
  auto [client, session] = connect();
  std::mt19937_64 rng(9);
  std::vector<std::size_t> sizes = {1, 15, 16, 17, 4095, 4096, 4097, 65536, std::size_t{8} << 20};
  for (int i = 0; i < 12; ++i) sizes.push_back(1 + rng() % (std::size_t{8} << 20));
  for (std::size_t n : sizes) {
    const Bytes payload = random_payload(n, n);
    EXPECT_EQ(read_region(epc, session->trusted_recv(client.send(payload))), payload) << n;
  }
}

TEST_F(Channel, EmptyPayload) {
  auto [client, session] = connect();
  const EpcRegion r = session->trusted_recv(client.send({}));
  EXPECT_EQ(r.size(), 0u);
  UntrustedBuffer rec = session->trusted_send(RegionHandle{}, 0, 0);
  EXPECT_TRUE(client.recv(rec.view()).empty());
}

TEST_F(Channel, ServerToClientRecords) {
  auto [client, session] = connect();
  const Bytes payload = random_payload(10'000, 10);
  EpcRegion r(epc, payload.size());
  epc.write(r.handle(), 0, payload);
  UntrustedBuffer rec0 = session->trusted_send(r.handle(), 0, 6000);
  UntrustedBuffer rec1 = session->trusted_send(r.handle(), 6000, 4000);
  Bytes got = client.recv(rec0.view());
  const Bytes tail = client.recv(rec1.view());
  got.insert(got.end(), tail.begin(), tail.end());
  EXPECT_EQ(got, payload);
  EXPECT_EQ(error_code([&] { client.recv(rec0.view()); }), Errc::kRecordRejected);
}

TEST_F(Channel, PayloadConfinedToTrustedArena) {
  auto [client, session] = connect();
  std::mt19937_64 rng(11);
  std::vector<UntrustedBuffer> records;  // ciphertext may sit in the arena
  std::vector<Bytes> payloads;
  std::vector<EpcRegion> plains;
  for (int i = 0; i < 20; ++i) {
    payloads.push_back(random_payload(16 + rng() % 3000, 100 + i));
    records.push_back(untrusted.copy_of(client.send(payloads.back()), "record"));
    plains.push_back(session->trusted_recv(records.back().view()));
    records.push_back(session->trusted_send(plains.back().handle(), 0, plains.back().size()));
  }
  for (const Bytes& p : payloads) {
    const ScanResult hits = untrusted.scan_windows(p);
    EXPECT_FALSE(hits.found) << hits.locations.size() << " windows leaked";
  }
}

TEST(WindowScan, FindsPlantedRun) {
  UntrustedArena arena;
  const Bytes secret = random_payload(1000, 12);
  UntrustedBuffer noise = arena.copy_of(random_payload(50'000, 13));
  EXPECT_FALSE(arena.scan_windows(secret).found);
  std::memcpy(noise.data() + 777, secret.data() + 500, 16);
  const ScanResult r = arena.scan_windows(secret);
  ASSERT_TRUE(r.found);
  EXPECT_EQ(r.locations[0].offset, 777u);
  // A stride-64 scan needs a run of at least 79 bytes.
  EXPECT_FALSE(arena.scan_windows(secret, 64).found);
  std::memcpy(noise.data() + 3000, secret.data() + 130, 79);
  EXPECT_TRUE(arena.scan_windows(secret, 64).found);
}

}  // namespace
}  // namespace encdp
