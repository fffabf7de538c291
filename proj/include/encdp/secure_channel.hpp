#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string_view>

#include "encdp/aes_gcm.hpp"
#include "encdp/bytes.hpp"
#include "encdp/epc.hpp"
#include "encdp/gate.hpp"
#include "encdp/untrusted_arena.hpp"

namespace encdp {

// One round trip of anonymous X25519, HKDF-SHA256 key schedule, then
// AES-128-GCM records with explicit sequence numbers.

inline constexpr std::string_view kChannelLabel = "enclave-datapath v1";
inline constexpr std::size_t kGroupElementBytes = 32;
inline constexpr std::size_t kHelloBytes = 2 + kGroupElementBytes;
/// Record = sequence(8, BE) || iv(12) || ciphertext || tag(16).
inline constexpr std::size_t kRecordHeaderBytes = 8 + kIvBytes;
inline constexpr std::size_t kRecordOverhead = kRecordHeaderBytes + kTagBytes;

using GroupElement = std::array<std::uint8_t, kGroupElementBytes>;

enum class Direction : std::uint32_t { kClientToServer = 0, kServerToClient = 1 };

struct SessionKeys {
  Key128 client_to_server{};
  Key128 server_to_client{};
  friend bool operator==(const SessionKeys&, const SessionKeys&) = default;
};

/// An X25519 key pair whose private half never leaves the object.
class EphemeralKey {
 public:
  static EphemeralKey generate();
  EphemeralKey(EphemeralKey&&) noexcept;
  EphemeralKey& operator=(EphemeralKey&&) noexcept;
  ~EphemeralKey();

  const GroupElement& public_key() const noexcept { return public_; }
  /// Raw X25519 output. HandshakeError for a malformed or low-order peer
  /// element (the all-zero shared secret is refused).
  void agree(const GroupElement& peer, MutableByteView shared_out) const;

 private:
  struct Impl;
  explicit EphemeralKey(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
  GroupElement public_{};
};

/// HKDF-SHA256(salt = client_pub || server_pub, ikm = shared,
/// info = kChannelLabel) -> 32 bytes split into the two direction keys.
SessionKeys derive_session_keys(ByteView shared, const GroupElement& client_pub, const GroupElement& server_pub);

/// Handshake message: 2-byte big-endian length, then the element.
Bytes encode_hello(const GroupElement& element);
GroupElement decode_hello(ByteView message);

Iv96 record_iv(Direction direction, std::uint64_t sequence);
/// Payload bytes carried by a record; RecordRejected if it is too short.
std::size_t record_payload_size(ByteView record);

/// The remote client. Runs in ordinary (client) memory, outside both arenas.
class ClientChannel {
 public:
  explicit ClientChannel(CipherBackend backend = CipherBackend::kAccelerated);

  Bytes hello() const;
  void complete(ByteView server_hello);
  bool established() const noexcept { return keys_.has_value(); }
  const SessionKeys& keys() const;

  Bytes send(ByteView plaintext);
  /// Opens a server record; RecordRejected on a bad tag, IV or sequence.
  Bytes recv(ByteView record);

 private:
  CipherBackend backend_;
  EphemeralKey ephemeral_;
  std::optional<SessionKeys> keys_;
  std::uint64_t send_seq_ = 0;
  std::optional<std::uint64_t> last_recv_seq_;
};

class TrustedChannel;

/// Server end of one session. Keys live in the trusted arena; every
/// operation is a gate call. Single writer per direction.
class TrustedSession {
 public:
  std::uint64_t id() const noexcept { return id_; }
  const Bytes& server_hello() const noexcept { return server_hello_; }

  /// Decrypts a client record into a new trusted region of the payload size.
  EpcRegion trusted_recv(ByteView record);
  /// Decrypts a client record into region[offset, offset + payload).
  /// Returns the payload size.
  std::size_t trusted_recv_into(ByteView record, RegionHandle region, std::size_t offset);
  /// Seals region[offset, offset + length) as a record in the untrusted arena.
  UntrustedBuffer trusted_send(RegionHandle region, std::size_t offset, std::size_t length);

 private:
  friend class TrustedChannel;
  TrustedSession(TrustedChannel& channel, std::uint64_t id);

  TrustedChannel& channel_;
  std::uint64_t id_;
  EpcRegion keys_;  // c2s || s2c
  Bytes server_hello_;
  std::mutex recv_mutex_;
  std::optional<std::uint64_t> last_recv_seq_;
  std::mutex send_mutex_;
  std::uint64_t send_seq_ = 0;
};

/// Accepts handshakes inside the trusted boundary.
class TrustedChannel {
 public:
  explicit TrustedChannel(CallGate& gate, CipherBackend backend = CipherBackend::kAccelerated);

  std::unique_ptr<TrustedSession> accept(ByteView client_hello);

  CallGate& gate() noexcept { return gate_; }
  CipherBackend backend() const noexcept { return backend_; }

 private:
  friend class TrustedSession;
  CallGate& gate_;
  CipherBackend backend_;
  CallHandle handshake_call_;
  CallHandle recv_call_;
  CallHandle send_call_;
  std::atomic<std::uint64_t> next_session_{1};
};

}  // namespace encdp
