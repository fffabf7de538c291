#include "encdp/aes_gcm.hpp"

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "encdp/error.hpp"
#include "gcm_kat.hpp"

namespace encdp {
namespace {

using testing::fixed;
using testing::KatCase;
using testing::kKat;

// Table-driven S-box reference: multiplicative inverse plus affine map.
std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
  std::uint8_t r = 0;
  while (b) {
    if (b & 1) r ^= a;
    a = static_cast<std::uint8_t>((a << 1) ^ ((a & 0x80) ? 0x1B : 0));
    b >>= 1;
  }
  return r;
}

std::uint8_t reference_sbox(std::uint8_t x) {
  std::uint8_t inv = 0;
  for (int y = 1; y < 256 && x != 0; ++y) {
    if (gf_mul(x, static_cast<std::uint8_t>(y)) == 1) inv = static_cast<std::uint8_t>(y);
  }
  std::uint8_t s = inv;
  for (int i = 1; i < 5; ++i) s ^= static_cast<std::uint8_t>((inv << i) | (inv >> (8 - i)));
  return s ^ 0x63;
}

TEST(PortableAes, SboxMatchesFieldInverse) {
  for (int base = 0; base < 256; base += 64) {
    std::uint8_t batch[64];
    for (int i = 0; i < 64; ++i) batch[i] = static_cast<std::uint8_t>(base + i);
    portable::sub_bytes64(batch);
    for (int i = 0; i < 64; ++i) {
      ASSERT_EQ(batch[i], reference_sbox(static_cast<std::uint8_t>(base + i))) << base + i;
    }
  }
}

TEST(PortableAes, Fips197BlockVector) {
  // AES-128 example vector from FIPS-197 appendix C.1.
  const Key128 key = fixed<16>("000102030405060708090a0b0c0d0e0f");
  portable::RoundKeys rk;
  portable::expand_key(key, rk);
  std::uint8_t in[64] = {};
  const Bytes pt = from_hex("00112233445566778899aabbccddeeff");
  for (int k = 0; k < 4; ++k) std::copy(pt.begin(), pt.end(), in + 16 * k);
  std::uint8_t out[64];
  portable::encrypt_blocks4(rk, in, out);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(to_hex({out + 16 * k, 16}), "69c4e0d86a7b0430d8cdb78070b4c55a");
  }
}

class KnownAnswer : public ::testing::TestWithParam<CipherBackend> {};

TEST_P(KnownAnswer, MatchesReferenceVectors) {
  ASSERT_GE(std::size(kKat), 20u);
  for (const KatCase& c : kKat) {
    const Key128 key = fixed<16>(c.key);
    const Iv96 iv = fixed<12>(c.iv);
    const Bytes pt = from_hex(c.plaintext);
    const Bytes aad = from_hex(c.aad);
    Bytes ct(pt.size());
    const Tag128 tag = gcm_seal(GetParam(), key, iv, aad, pt, ct);
    EXPECT_EQ(to_hex(ct), c.ciphertext);
    EXPECT_EQ(to_hex(tag), c.tag);

    Bytes back(ct.size());
    ASSERT_TRUE(gcm_open(GetParam(), key, iv, aad, ct, tag, back));
    EXPECT_EQ(back, pt);
  }
}

TEST_P(KnownAnswer, StreamingInOddChunksMatchesOneShot) {
  std::mt19937_64 rng(7);
  for (const KatCase& c : kKat) {
    const Key128 key = fixed<16>(c.key);
    const Iv96 iv = fixed<12>(c.iv);
    const Bytes pt = from_hex(c.plaintext);
    Bytes ct(pt.size());
    GcmStream& s = gcm_stream(GetParam());
    s.begin_seal(key, iv, from_hex(c.aad));
    for (std::size_t off = 0; off < pt.size();) {
      const std::size_t n = std::min<std::size_t>(pt.size() - off, 1 + rng() % 37);
      s.seal_update(ByteView(pt).subspan(off, n), MutableByteView(ct).subspan(off, n));
      off += n;
    }
    EXPECT_EQ(to_hex(s.seal_finish()), c.tag);
    EXPECT_EQ(to_hex(ct), c.ciphertext);
  }
}

TEST_P(KnownAnswer, TamperIsRejectedAndOutputUntouched) {
  const KatCase& c = kKat[3];  // 60-byte plaintext with AAD
  const Key128 key = fixed<16>(c.key);
  const Iv96 iv = fixed<12>(c.iv);
  Bytes ct = from_hex(c.ciphertext);
  Tag128 tag = fixed<16>(c.tag);
  Bytes aad = from_hex(c.aad);
  Bytes out(ct.size(), 0xAB);

  ct[0] ^= 1;
  EXPECT_FALSE(gcm_open(GetParam(), key, iv, aad, ct, tag, out));
  ct[0] ^= 1;
  tag[15] ^= 0x80;
  EXPECT_FALSE(gcm_open(GetParam(), key, iv, aad, ct, tag, out));
  tag[15] ^= 0x80;
  aad.push_back(0);
  EXPECT_FALSE(gcm_open(GetParam(), key, iv, aad, ct, tag, out));
  for (std::uint8_t b : out) ASSERT_EQ(b, 0xAB);
}

INSTANTIATE_TEST_SUITE_P(Backends, KnownAnswer,
                         ::testing::Values(CipherBackend::kAccelerated, CipherBackend::kPortable),
                         [](const auto& info) { return std::string(backend_name(info.param)); });

TEST(BackendEquivalence, ThousandRandomTuples) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    Key128 key;
    Iv96 iv;
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    for (auto& b : iv) b = static_cast<std::uint8_t>(rng());
    Bytes aad(rng() % 64);
    Bytes pt(rng() % 2048);
    for (auto& b : aad) b = static_cast<std::uint8_t>(rng());
    for (auto& b : pt) b = static_cast<std::uint8_t>(rng());
    Bytes ct_a(pt.size()), ct_p(pt.size());
    const Tag128 ta = gcm_seal(CipherBackend::kAccelerated, key, iv, aad, pt, ct_a);
    const Tag128 tp = gcm_seal(CipherBackend::kPortable, key, iv, aad, pt, ct_p);
    ASSERT_EQ(ct_a, ct_p) << "trial " << trial;
    ASSERT_EQ(ta, tp) << "trial " << trial;
  }
}

TEST(BackendNames, RoundTrip) {
  for (CipherBackend b : {CipherBackend::kAccelerated, CipherBackend::kPortable}) {
    EXPECT_EQ(parse_backend(backend_name(b)), b);
  }
  EXPECT_FALSE(parse_backend("sgxsdk").has_value());
}

}  // namespace
}  // namespace encdp
