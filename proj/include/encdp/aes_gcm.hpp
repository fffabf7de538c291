#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>

#include "encdp/bytes.hpp"

namespace encdp {

/// AES-128-GCM implementations. Both produce identical output for identical
/// (key, iv, aad, plaintext); they differ only in speed.
enum class CipherBackend {
  kAccelerated,  // OpenSSL EVP, AES-NI / PCLMULQDQ when the host has them
  kPortable,     // bit-sliced constant-time software AES + GHASH
};

std::string_view backend_name(CipherBackend backend);
std::optional<CipherBackend> parse_backend(std::string_view name);

/// Largest message a single stream accepts: the 32-bit block counter of GCM
/// must not wrap past J0.
inline constexpr std::uint64_t kMaxGcmMessageBytes = (std::uint64_t{0xFFFFFFFF} - 2) * 16;

/// Streaming AES-128-GCM. One stream object is reused across messages; it
/// is not thread-safe, so callers keep one per thread (see gcm_stream()).
///
/// Three ways to drive a message:
///  - seal:   begin_seal, seal_update*, seal_finish -> tag
///  - verify: begin_verify, verify_update*, verify_finish(tag) -> ok
///  - ctr:    begin_ctr, ctr_update*   (keystream only, no authentication)
/// Decryption is verify followed by ctr, so no plaintext is produced before
/// the tag has been checked.
class GcmStream {
 public:
  virtual ~GcmStream() = default;

  virtual CipherBackend backend() const noexcept = 0;

  virtual void begin_seal(const Key128& key, const Iv96& iv, ByteView aad) = 0;
  virtual void seal_update(ByteView in, MutableByteView out) = 0;
  virtual Tag128 seal_finish() = 0;

  virtual void begin_verify(const Key128& key, const Iv96& iv, ByteView aad) = 0;
  virtual void verify_update(ByteView ciphertext) = 0;
  virtual bool verify_finish(const Tag128& tag) = 0;

  virtual void begin_ctr(const Key128& key, const Iv96& iv) = 0;
  virtual void ctr_update(ByteView in, MutableByteView out) = 0;
};

std::unique_ptr<GcmStream> make_gcm_stream(CipherBackend backend);

/// The calling thread's stream for `backend`. gcm_seal() and gcm_open() use
/// a different one, so they are safe to call while this one is mid-stream.
GcmStream& gcm_stream(CipherBackend backend);

/// One-shot encryption; `out` must be plaintext.size() bytes (may alias).
Tag128 gcm_seal(CipherBackend backend, const Key128& key, const Iv96& iv, ByteView aad,
                ByteView plaintext, MutableByteView out);

/// One-shot verify-then-decrypt. `out` is left untouched when the tag fails.
bool gcm_open(CipherBackend backend, const Key128& key, const Iv96& iv, ByteView aad,
              ByteView ciphertext, const Tag128& tag, MutableByteView out);

bool constant_time_equal(ByteView a, ByteView b) noexcept;

namespace portable {

/// Encrypts four independent blocks (64 bytes) with an expanded key.
struct RoundKeys {
  std::uint64_t planes[11][8];
};
void expand_key(const Key128& key, RoundKeys& out);
void encrypt_blocks4(const RoundKeys& keys, const std::uint8_t in[64], std::uint8_t out[64]);

/// Applies the bit-sliced S-box to every byte of a 64-byte batch.
void sub_bytes64(std::uint8_t bytes[64]);

/// GHASH state update: y = (y ^ block_i) * h over all full blocks of data.
/// `data.size()` must be a multiple of 16.
void ghash_blocks(std::uint64_t y[2], const std::uint64_t h[2], ByteView data);

}  // namespace portable

}  // namespace encdp
