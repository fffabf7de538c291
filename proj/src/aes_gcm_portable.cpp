// Bit-sliced AES-128 and carry-less-multiply GHASH, both free of
// secret-dependent branches and table lookups.
//
// Layout: a batch of four 16-byte blocks is held as eight 64-bit planes.
// Plane b carries bit b of every byte; the byte at batch offset p (block
// p / 16, state byte p % 16) sits at bit p of each plane.

#include <algorithm>
#include <cstring>

#include "encdp/aes_gcm.hpp"
#include "encdp/error.hpp"

namespace encdp {
namespace portable {
namespace {

inline std::uint64_t load_le64(const std::uint8_t* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;  // x86-64 / little-endian hosts only
}

inline void store_le64(std::uint8_t* p, std::uint64_t v) { std::memcpy(p, &v, 8); }

// 8x8 bit-matrix transpose: bit (8*row + col) <-> bit (8*col + row).
inline std::uint64_t transpose8x8(std::uint64_t x) {
  std::uint64_t t;
  t = (x ^ (x >> 7)) & 0x00AA00AA00AA00AAULL;
  x = x ^ t ^ (t << 7);
  t = (x ^ (x >> 14)) & 0x0000CCCC0000CCCCULL;
  x = x ^ t ^ (t << 14);
  t = (x ^ (x >> 28)) & 0x00000000F0F0F0F0ULL;
  x = x ^ t ^ (t << 28);
  return x;
}

void to_planes(const std::uint8_t* in, std::uint64_t q[8]) {
  std::uint64_t w[8];
  for (int i = 0; i < 8; ++i) w[i] = transpose8x8(load_le64(in + 8 * i));
  for (int b = 0; b < 8; ++b) {
    std::uint64_t plane = 0;
    for (int i = 0; i < 8; ++i) plane |= ((w[i] >> (8 * b)) & 0xFF) << (8 * i);
    q[b] = plane;
  }
}

void from_planes(const std::uint64_t q[8], std::uint8_t* out) {
  for (int i = 0; i < 8; ++i) {
    std::uint64_t w = 0;
    for (int b = 0; b < 8; ++b) w |= ((q[b] >> (8 * i)) & 0xFF) << (8 * b);
    store_le64(out + 8 * i, transpose8x8(w));
  }
}

// Boyar-Peralta S-box circuit (113 gates), inputs/outputs MSB first.
void sbox(std::uint64_t q[8]) {
  const std::uint64_t x0 = q[7], x1 = q[6], x2 = q[5], x3 = q[4];
  const std::uint64_t x4 = q[3], x5 = q[2], x6 = q[1], x7 = q[0];

  const std::uint64_t y14 = x3 ^ x5;
  const std::uint64_t y13 = x0 ^ x6;
  const std::uint64_t y9 = x0 ^ x3;
  const std::uint64_t y8 = x0 ^ x5;
  const std::uint64_t t0 = x1 ^ x2;
  const std::uint64_t y1 = t0 ^ x7;
  const std::uint64_t y4 = y1 ^ x3;
  const std::uint64_t y12 = y13 ^ y14;
  const std::uint64_t y2 = y1 ^ x0;
  const std::uint64_t y5 = y1 ^ x6;
  const std::uint64_t y3 = y5 ^ y8;
  const std::uint64_t t1 = x4 ^ y12;
  const std::uint64_t y15 = t1 ^ x5;
  const std::uint64_t y20 = t1 ^ x1;
  const std::uint64_t y6 = y15 ^ x7;
  const std::uint64_t y10 = y15 ^ t0;
  const std::uint64_t y11 = y20 ^ y9;
  const std::uint64_t y7 = x7 ^ y11;
  const std::uint64_t y17 = y10 ^ y11;
  const std::uint64_t y19 = y10 ^ y8;
  const std::uint64_t y16 = t0 ^ y11;
  const std::uint64_t y21 = y13 ^ y16;
  const std::uint64_t y18 = x0 ^ y16;

  const std::uint64_t t2 = y12 & y15;
  const std::uint64_t t3 = y3 & y6;
  const std::uint64_t t4 = t3 ^ t2;
  const std::uint64_t t5 = y4 & x7;
  const std::uint64_t t6 = t5 ^ t2;
  const std::uint64_t t7 = y13 & y16;
  const std::uint64_t t8 = y5 & y1;
  const std::uint64_t t9 = t8 ^ t7;
  const std::uint64_t t10 = y2 & y7;
  const std::uint64_t t11 = t10 ^ t7;
  const std::uint64_t t12 = y9 & y11;
  const std::uint64_t t13 = y14 & y17;
  const std::uint64_t t14 = t13 ^ t12;
  const std::uint64_t t15 = y8 & y10;
  const std::uint64_t t16 = t15 ^ t12;
  const std::uint64_t t17 = t4 ^ t14;
  const std::uint64_t t18 = t6 ^ t16;
  const std::uint64_t t19 = t9 ^ t14;
  const std::uint64_t t20 = t11 ^ t16;
  const std::uint64_t t21 = t17 ^ y20;
  const std::uint64_t t22 = t18 ^ y19;
  const std::uint64_t t23 = t19 ^ y21;
  const std::uint64_t t24 = t20 ^ y18;

  const std::uint64_t t25 = t21 ^ t22;
  const std::uint64_t t26 = t21 & t23;
  const std::uint64_t t27 = t24 ^ t26;
  const std::uint64_t t28 = t25 & t27;
  const std::uint64_t t29 = t28 ^ t22;
  const std::uint64_t t30 = t23 ^ t24;
  const std::uint64_t t31 = t22 ^ t26;
  const std::uint64_t t32 = t31 & t30;
  const std::uint64_t t33 = t32 ^ t24;
  const std::uint64_t t34 = t23 ^ t33;
  const std::uint64_t t35 = t27 ^ t33;
  const std::uint64_t t36 = t24 & t35;
  const std::uint64_t t37 = t36 ^ t34;
  const std::uint64_t t38 = t27 ^ t36;
  const std::uint64_t t39 = t29 & t38;
  const std::uint64_t t40 = t25 ^ t39;

  const std::uint64_t t41 = t40 ^ t37;
  const std::uint64_t t42 = t29 ^ t33;
  const std::uint64_t t43 = t29 ^ t40;
  const std::uint64_t t44 = t33 ^ t37;
  const std::uint64_t t45 = t42 ^ t41;
  const std::uint64_t z0 = t44 & y15;
  const std::uint64_t z1 = t37 & y6;
  const std::uint64_t z2 = t33 & x7;
  const std::uint64_t z3 = t43 & y16;
  const std::uint64_t z4 = t40 & y1;
  const std::uint64_t z5 = t29 & y7;
  const std::uint64_t z6 = t42 & y11;
  const std::uint64_t z7 = t45 & y17;
  const std::uint64_t z8 = t41 & y10;
  const std::uint64_t z9 = t44 & y12;
  const std::uint64_t z10 = t37 & y3;
  const std::uint64_t z11 = t33 & y4;
  const std::uint64_t z12 = t43 & y13;
  const std::uint64_t z13 = t40 & y5;
  const std::uint64_t z14 = t29 & y2;
  const std::uint64_t z15 = t42 & y9;
  const std::uint64_t z16 = t45 & y14;
  const std::uint64_t z17 = t41 & y8;

  const std::uint64_t t46 = z15 ^ z16;
  const std::uint64_t t47 = z10 ^ z11;
  const std::uint64_t t48 = z5 ^ z13;
  const std::uint64_t t49 = z9 ^ z10;
  const std::uint64_t t50 = z2 ^ z12;
  const std::uint64_t t51 = z2 ^ z5;
  const std::uint64_t t52 = z7 ^ z8;
  const std::uint64_t t53 = z0 ^ z3;
  const std::uint64_t t54 = z6 ^ z7;
  const std::uint64_t t55 = z16 ^ z17;
  const std::uint64_t t56 = z12 ^ t48;
  const std::uint64_t t57 = t50 ^ t53;
  const std::uint64_t t58 = z4 ^ t46;
  const std::uint64_t t59 = z3 ^ t54;
  const std::uint64_t t60 = t46 ^ t57;
  const std::uint64_t t61 = z14 ^ t57;
  const std::uint64_t t62 = t52 ^ t58;
  const std::uint64_t t63 = t49 ^ t58;
  const std::uint64_t t64 = z4 ^ t59;
  const std::uint64_t t65 = t61 ^ t62;
  const std::uint64_t t66 = z1 ^ t63;
  const std::uint64_t s0 = t59 ^ t63;
  const std::uint64_t s6 = t56 ^ ~t62;
  const std::uint64_t s7 = t48 ^ ~t60;
  const std::uint64_t t67 = t64 ^ t65;
  const std::uint64_t s3 = t53 ^ t66;
  const std::uint64_t s4 = t51 ^ t66;
  const std::uint64_t s5 = t47 ^ t65;
  const std::uint64_t s1 = t64 ^ ~s3;
  const std::uint64_t s2 = t55 ^ ~t67;

  q[7] = s0;
  q[6] = s1;
  q[5] = s2;
  q[4] = s3;
  q[3] = s4;
  q[2] = s5;
  q[1] = s6;
  q[0] = s7;
}

constexpr std::uint64_t lanes(std::uint64_t m16) {
  return m16 | (m16 << 16) | (m16 << 32) | (m16 << 48);
}

inline std::uint64_t shift_rows_plane(std::uint64_t x) {
  const std::uint64_t r0 = x & lanes(0x1111);
  const std::uint64_t r1 = x & lanes(0x2222);
  const std::uint64_t r2 = x & lanes(0x4444);
  const std::uint64_t r3 = x & lanes(0x8888);
  return r0 | ((r1 >> 4) & lanes(0x0222)) | ((r1 << 12) & lanes(0x2000)) |
         ((r2 >> 8) & lanes(0x0044)) | ((r2 << 8) & lanes(0x4400)) |
         ((r3 >> 12) & lanes(0x0008)) | ((r3 << 4) & lanes(0x8880));
}

// Row r of the result holds row (r + k) mod 4 of the input, per column.
inline std::uint64_t rot1(std::uint64_t x) {
  return ((x >> 1) & 0x7777777777777777ULL) | ((x << 3) & 0x8888888888888888ULL);
}
inline std::uint64_t rot2(std::uint64_t x) {
  return ((x >> 2) & 0x3333333333333333ULL) | ((x << 2) & 0xCCCCCCCCCCCCCCCCULL);
}

void mix_columns(std::uint64_t q[8]) {
  std::uint64_t a1[8], t[8];
  for (int b = 0; b < 8; ++b) {
    a1[b] = rot1(q[b]);
    t[b] = q[b] ^ a1[b];
  }
  // xtime over the planes of t (reduction polynomial 0x11B).
  const std::uint64_t m[8] = {t[7],      t[0] ^ t[7], t[1], t[2] ^ t[7],
                              t[3] ^ t[7], t[4],      t[5], t[6]};
  for (int b = 0; b < 8; ++b) q[b] = m[b] ^ a1[b] ^ rot2(t[b]);
}

void broadcast_to_planes(const std::uint8_t block[16], std::uint64_t planes[8]) {
  std::uint8_t batch[64];
  for (int k = 0; k < 4; ++k) std::memcpy(batch + 16 * k, block, 16);
  to_planes(batch, planes);
}

}  // namespace

void sub_bytes64(std::uint8_t bytes[64]) {
  std::uint64_t q[8];
  to_planes(bytes, q);
  sbox(q);
  from_planes(q, bytes);
}

void expand_key(const Key128& key, RoundKeys& out) {
  std::uint8_t w[176];
  std::memcpy(w, key.data(), 16);
  std::uint8_t rcon = 1;
  for (int i = 4; i < 44; ++i) {
    std::uint8_t t[4];
    std::memcpy(t, w + 4 * (i - 1), 4);
    if (i % 4 == 0) {
      std::uint8_t batch[64] = {};
      batch[0] = t[1];
      batch[1] = t[2];
      batch[2] = t[3];
      batch[3] = t[0];
      sub_bytes64(batch);
      t[0] = static_cast<std::uint8_t>(batch[0] ^ rcon);
      t[1] = batch[1];
      t[2] = batch[2];
      t[3] = batch[3];
      rcon = static_cast<std::uint8_t>((rcon << 1) ^ ((rcon >> 7) * 0x1B));
    }
    for (int j = 0; j < 4; ++j) w[4 * i + j] = static_cast<std::uint8_t>(w[4 * (i - 4) + j] ^ t[j]);
  }
  for (int r = 0; r < 11; ++r) broadcast_to_planes(w + 16 * r, out.planes[r]);
  secure_wipe({w, sizeof(w)});
}

void encrypt_blocks4(const RoundKeys& keys, const std::uint8_t in[64], std::uint8_t out[64]) {
  std::uint64_t q[8];
  to_planes(in, q);
  for (int b = 0; b < 8; ++b) q[b] ^= keys.planes[0][b];
  for (int r = 1; r < 10; ++r) {
    sbox(q);
    for (int b = 0; b < 8; ++b) q[b] = shift_rows_plane(q[b]);
    mix_columns(q);
    for (int b = 0; b < 8; ++b) q[b] ^= keys.planes[r][b];
  }
  sbox(q);
  for (int b = 0; b < 8; ++b) q[b] = shift_rows_plane(q[b]) ^ keys.planes[10][b];
  from_planes(q, out);
}

namespace {

// Low 64 bits of the carry-less product, using integer multiplies on
// operands with 3-bit holes so carries never reach a result bit.
inline std::uint64_t bmul64(std::uint64_t x, std::uint64_t y) {
  const std::uint64_t x0 = x & 0x1111111111111111ULL;
  const std::uint64_t x1 = x & 0x2222222222222222ULL;
  const std::uint64_t x2 = x & 0x4444444444444444ULL;
  const std::uint64_t x3 = x & 0x8888888888888888ULL;
  const std::uint64_t y0 = y & 0x1111111111111111ULL;
  const std::uint64_t y1 = y & 0x2222222222222222ULL;
  const std::uint64_t y2 = y & 0x4444444444444444ULL;
  const std::uint64_t y3 = y & 0x8888888888888888ULL;
  std::uint64_t z0 = (x0 * y0) ^ (x1 * y3) ^ (x2 * y2) ^ (x3 * y1);
  std::uint64_t z1 = (x0 * y1) ^ (x1 * y0) ^ (x2 * y3) ^ (x3 * y2);
  std::uint64_t z2 = (x0 * y2) ^ (x1 * y1) ^ (x2 * y0) ^ (x3 * y3);
  std::uint64_t z3 = (x0 * y3) ^ (x1 * y2) ^ (x2 * y1) ^ (x3 * y0);
  z0 &= 0x1111111111111111ULL;
  z1 &= 0x2222222222222222ULL;
  z2 &= 0x4444444444444444ULL;
  z3 &= 0x8888888888888888ULL;
  return z0 | z1 | z2 | z3;
}

inline std::uint64_t rev64(std::uint64_t x) {
  x = ((x & 0x5555555555555555ULL) << 1) | ((x >> 1) & 0x5555555555555555ULL);
  x = ((x & 0x3333333333333333ULL) << 2) | ((x >> 2) & 0x3333333333333333ULL);
  x = ((x & 0x0F0F0F0F0F0F0F0FULL) << 4) | ((x >> 4) & 0x0F0F0F0F0F0F0F0FULL);
  x = ((x & 0x00FF00FF00FF00FFULL) << 8) | ((x >> 8) & 0x00FF00FF00FF00FFULL);
  x = ((x & 0x0000FFFF0000FFFFULL) << 16) | ((x >> 16) & 0x0000FFFF0000FFFFULL);
  return (x << 32) | (x >> 32);
}

}  // namespace

// y[0] / h[0] hold the high (first) 64 bits of the big-endian block.
void ghash_blocks(std::uint64_t y[2], const std::uint64_t h[2], ByteView data) {
  const std::uint64_t h1 = h[0];
  const std::uint64_t h0 = h[1];
  const std::uint64_t h0r = rev64(h0);
  const std::uint64_t h1r = rev64(h1);
  const std::uint64_t h2 = h0 ^ h1;
  const std::uint64_t h2r = h0r ^ h1r;
  std::uint64_t y1 = y[0];
  std::uint64_t y0 = y[1];
  for (std::size_t off = 0; off + 16 <= data.size(); off += 16) {
    y1 ^= load_be64(data.data() + off);
    y0 ^= load_be64(data.data() + off + 8);
    const std::uint64_t y0r = rev64(y0);
    const std::uint64_t y1r = rev64(y1);
    const std::uint64_t y2 = y0 ^ y1;
    const std::uint64_t y2r = y0r ^ y1r;

    const std::uint64_t z0 = bmul64(y0, h0);
    const std::uint64_t z1 = bmul64(y1, h1);
    std::uint64_t z2 = bmul64(y2, h2);
    std::uint64_t z0h = bmul64(y0r, h0r);
    std::uint64_t z1h = bmul64(y1r, h1r);
    std::uint64_t z2h = bmul64(y2r, h2r);
    z2 ^= z0 ^ z1;
    z2h ^= z0h ^ z1h;
    z0h = rev64(z0h) >> 1;
    z1h = rev64(z1h) >> 1;
    z2h = rev64(z2h) >> 1;

    std::uint64_t v0 = z0;
    std::uint64_t v1 = z0h ^ z2;
    std::uint64_t v2 = z1 ^ z2h;
    std::uint64_t v3 = z1h;

    v3 = (v3 << 1) | (v2 >> 63);
    v2 = (v2 << 1) | (v1 >> 63);
    v1 = (v1 << 1) | (v0 >> 63);
    v0 = (v0 << 1);

    v2 ^= v0 ^ (v0 >> 1) ^ (v0 >> 2) ^ (v0 >> 7);
    v1 ^= (v0 << 63) ^ (v0 << 62) ^ (v0 << 57);
    v3 ^= v1 ^ (v1 >> 1) ^ (v1 >> 2) ^ (v1 >> 7);
    v2 ^= (v1 << 63) ^ (v1 << 62) ^ (v1 << 57);

    y0 = v2;
    y1 = v3;
  }
  y[0] = y1;
  y[1] = y0;
}

}  // namespace portable

namespace {

class PortableGcm final : public GcmStream {
 public:
  ~PortableGcm() override { wipe(); }

  CipherBackend backend() const noexcept override { return CipherBackend::kPortable; }

  void begin_seal(const Key128& key, const Iv96& iv, ByteView aad) override {
    begin(key, iv);
    absorb_aad(aad);
  }

  void seal_update(ByteView in, MutableByteView out) override {
    check_sizes(in, out);
    std::size_t off = 0;
    while (off < in.size()) {
      const std::size_t n = std::min<std::size_t>(in.size() - off, kChunk);
      xor_keystream(in.data() + off, out.data() + off, n);
      hash_ciphertext({out.data() + off, n});
      off += n;
    }
  }

  Tag128 seal_finish() override { return compute_tag(); }

  void begin_verify(const Key128& key, const Iv96& iv, ByteView aad) override {
    begin(key, iv);
    absorb_aad(aad);
  }

  void verify_update(ByteView ciphertext) override {
    ct_len_ += ciphertext.size();
    check_length();
    hash_ciphertext_unchecked(ciphertext);
  }

  bool verify_finish(const Tag128& tag) override {
    const Tag128 expected = compute_tag();
    return constant_time_equal(expected, tag);
  }

  void begin_ctr(const Key128& key, const Iv96& iv) override { begin(key, iv); }

  void ctr_update(ByteView in, MutableByteView out) override {
    check_sizes(in, out);
    xor_keystream(in.data(), out.data(), in.size());
  }

 private:
  static constexpr std::size_t kChunk = 64 * 1024;

  void begin(const Key128& key, const Iv96& iv) {
    portable::expand_key(key, keys_);
    std::uint8_t in[64] = {};
    std::memcpy(in + 16, iv.data(), 12);
    store_be32(in + 28, 1);
    std::uint8_t out[64];
    portable::encrypt_blocks4(keys_, in, out);
    h_[0] = load_be64(out);
    h_[1] = load_be64(out + 8);
    std::memcpy(ej0_, out + 16, 16);
    secure_wipe({out, sizeof(out)});
    std::memcpy(iv_, iv.data(), 12);
    counter_ = 2;
    ks_pos_ = sizeof(ks_);
    y_[0] = y_[1] = 0;
    partial_len_ = 0;
    aad_len_ = 0;
    ct_len_ = 0;
  }

  void absorb_aad(ByteView aad) {
    aad_len_ = aad.size();
    const std::size_t full = aad.size() / 16 * 16;
    portable::ghash_blocks(y_, h_, aad.first(full));
    if (full < aad.size()) {
      std::uint8_t block[16] = {};
      std::memcpy(block, aad.data() + full, aad.size() - full);
      portable::ghash_blocks(y_, h_, {block, 16});
    }
  }

  void check_sizes(ByteView in, MutableByteView out) {
    if (in.size() != out.size()) raise(Errc::kInvalidArgument, "gcm input/output size mismatch");
  }

  void check_length() const {
    if (ct_len_ > kMaxGcmMessageBytes) raise(Errc::kInvalidArgument, "gcm message too long");
  }

  void refill_keystream() {
    std::uint8_t ctr_blocks[64];
    for (int k = 0; k < 4; ++k) {
      std::memcpy(ctr_blocks + 16 * k, iv_, 12);
      store_be32(ctr_blocks + 16 * k + 12, counter_++);
    }
    portable::encrypt_blocks4(keys_, ctr_blocks, ks_);
    ks_pos_ = 0;
  }

  void xor_keystream(const std::uint8_t* in, std::uint8_t* out, std::size_t n) {
    for (std::size_t i = 0; i < n;) {
      if (ks_pos_ == sizeof(ks_)) refill_keystream();
      const std::size_t take = std::min(n - i, sizeof(ks_) - ks_pos_);
      for (std::size_t j = 0; j < take; ++j) out[i + j] = in[i + j] ^ ks_[ks_pos_ + j];
      ks_pos_ += take;
      i += take;
    }
  }

  void hash_ciphertext(ByteView ct) {
    ct_len_ += ct.size();
    check_length();
    hash_ciphertext_unchecked(ct);
  }

  void hash_ciphertext_unchecked(ByteView ct) {
    std::size_t off = 0;
    if (partial_len_ > 0) {
      const std::size_t take = std::min(ct.size(), 16 - partial_len_);
      std::memcpy(partial_ + partial_len_, ct.data(), take);
      partial_len_ += take;
      off = take;
      if (partial_len_ < 16) return;
      portable::ghash_blocks(y_, h_, {partial_, 16});
      partial_len_ = 0;
    }
    const std::size_t full = (ct.size() - off) / 16 * 16;
    portable::ghash_blocks(y_, h_, ct.subspan(off, full));
    off += full;
    if (off < ct.size()) {
      partial_len_ = ct.size() - off;
      std::memcpy(partial_, ct.data() + off, partial_len_);
    }
  }

  Tag128 compute_tag() {
    if (partial_len_ > 0) {
      std::memset(partial_ + partial_len_, 0, 16 - partial_len_);
      portable::ghash_blocks(y_, h_, {partial_, 16});
      partial_len_ = 0;
    }
    std::uint8_t lens[16];
    store_be64(lens, std::uint64_t{aad_len_} * 8);
    store_be64(lens + 8, std::uint64_t{ct_len_} * 8);
    portable::ghash_blocks(y_, h_, {lens, 16});
    Tag128 tag;
    store_be64(tag.data(), y_[0]);
    store_be64(tag.data() + 8, y_[1]);
    for (int i = 0; i < 16; ++i) tag[i] ^= ej0_[i];
    wipe();
    return tag;
  }

  void wipe() noexcept {
    secure_wipe({reinterpret_cast<std::uint8_t*>(&keys_), sizeof(keys_)});
    secure_wipe({reinterpret_cast<std::uint8_t*>(h_), sizeof(h_)});
    secure_wipe({ks_, sizeof(ks_)});
    secure_wipe({ej0_, sizeof(ej0_)});
  }

  portable::RoundKeys keys_{};
  std::uint64_t h_[2] = {};
  std::uint64_t y_[2] = {};
  std::uint8_t ej0_[16] = {};
  std::uint8_t iv_[12] = {};
  std::uint32_t counter_ = 2;
  std::uint8_t ks_[64] = {};
  std::size_t ks_pos_ = 64;
  std::uint8_t partial_[16] = {};
  std::size_t partial_len_ = 0;
  std::uint64_t aad_len_ = 0;
  std::uint64_t ct_len_ = 0;
};

}  // namespace

std::unique_ptr<GcmStream> make_portable_gcm() { return std::make_unique<PortableGcm>(); }

}  // namespace encdp
