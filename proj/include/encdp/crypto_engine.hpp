#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <shared_mutex>
#include <vector>

#include "encdp/aes_gcm.hpp"
#include "encdp/bytes.hpp"
#include "encdp/epc.hpp"
#include "encdp/gate.hpp"
#include "encdp/op_control.hpp"
#include "encdp/secure_channel.hpp"

namespace encdp {

using KeyId = std::uint32_t;

inline constexpr std::size_t kSealedRecordOverhead = kIvBytes + kTagBytes;

/// The IV and tag that accompany a ciphertext of the plaintext's length.
struct RecordHeader {
  Iv96 iv{};
  Tag128 tag{};
  friend bool operator==(const RecordHeader&, const RecordHeader&) = default;
};

struct SealedRecord {
  Iv96 iv{};
  Bytes ciphertext;
  Tag128 tag{};
  std::size_t aad_len = 0;

  RecordHeader header() const { return {iv, tag}; }
  /// iv || ciphertext || tag
  Bytes serialize() const;
  static SealedRecord parse(ByteView wire);
};

/// IV = lane (32 bits, big-endian) || counter (64 bits, big-endian).
std::uint32_t iv_lane(const Iv96& iv);
std::uint64_t iv_counter(const Iv96& iv);

struct EngineConfig {
  CipherBackend backend = CipherBackend::kAccelerated;
  std::size_t max_plaintext = std::size_t{256} << 20;
};

/// AES-128-GCM behind the call gate. Keys live in the trusted arena and are
/// named by opaque ids; each data operation is exactly one gate call.
///
/// Every thread gets its own IV lane per engine, so concurrent encryptions
/// never coordinate on nonces.
class CryptoEngine {
 public:
  explicit CryptoEngine(CallGate& gate, EngineConfig config = {});
  CryptoEngine(const CryptoEngine&) = delete;
  CryptoEngine& operator=(const CryptoEngine&) = delete;

  KeyId generate_key();
  /// Installs a 16-byte key delivered as one channel record. A record that
  /// fails authentication or has the wrong length -> KeyInstallRejected.
  KeyId install_key(TrustedSession& session, ByteView wrapped_key);
  bool has_key(KeyId id) const;
  std::size_t key_count() const;

  /// Buffers in untrusted memory, accessed in place.
  RecordHeader encrypt(KeyId id, ByteView plaintext, MutableByteView ciphertext, ByteView aad,
                       const OpControl& control = {});
  SealedRecord encrypt(KeyId id, ByteView plaintext, ByteView aad);
  /// Plaintext already inside the trusted arena; ciphertext goes out.
  RecordHeader encrypt_local(KeyId id, RegionHandle region, std::size_t offset, std::size_t length,
                             MutableByteView ciphertext, ByteView aad, const OpControl& control = {});

  /// Verify first, then decrypt: on AuthError `plaintext` is untouched.
  void decrypt(KeyId id, const RecordHeader& header, ByteView ciphertext, ByteView aad, MutableByteView plaintext);
  Bytes decrypt(KeyId id, const SealedRecord& record, ByteView aad);
  void decrypt_local(KeyId id, const RecordHeader& header, ByteView ciphertext, ByteView aad, RegionHandle region,
                     std::size_t offset);

  /// The caller owns IV uniqueness. For known-answer tests.
  RecordHeader encrypt_with_iv(KeyId id, const Iv96& iv, ByteView plaintext, MutableByteView ciphertext,
                               ByteView aad);

  /// Where a key's 16 bytes sit in the trusted arena. Test oracle only.
  struct KeySlot {
    RegionHandle region;
    std::size_t offset;
  };
  KeySlot key_slot(KeyId id) const;

  CallGate& gate() noexcept { return gate_; }
  const EngineConfig& config() const noexcept { return config_; }

 private:
  static constexpr std::size_t kKeysPerRegion = 256;

  KeyId reserve_slot(KeySlot& slot);
  void commit_slot(KeyId id);
  void abandon_slot(KeyId id) noexcept;
  Iv96 next_iv();
  BufferRef key_ref(KeyId id) const;
  BufferRef local_ref(RegionHandle region, std::size_t offset, std::size_t length, KeyId id) const;
  void check_size(std::size_t n) const;
  RecordHeader seal(KeyId id, const Iv96& iv, ByteView plaintext, MutableByteView ciphertext, ByteView aad,
                    const OpControl& control);

  CallGate& gate_;
  const EngineConfig config_;
  const std::uint64_t uid_;
  const std::uint32_t lane_base_;
  std::atomic<std::uint64_t> lanes_issued_{0};

  CallHandle generate_call_;
  CallHandle install_call_;
  CallHandle encrypt_call_;
  CallHandle encrypt_local_call_;
  CallHandle decrypt_call_;
  CallHandle decrypt_local_call_;

  mutable std::shared_mutex keys_mutex_;
  std::vector<EpcRegion> key_regions_;
  std::vector<std::uint8_t> key_live_;  // by slot index; id = index + 1
};

}  // namespace encdp
