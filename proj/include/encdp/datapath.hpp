#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "encdp/bytes.hpp"
#include "encdp/crypto_engine.hpp"
#include "encdp/secure_channel.hpp"
#include "encdp/untrusted_arena.hpp"

namespace encdp {

enum class SecurityMode {
  kKeyProtection,  // payload buffers in untrusted memory, only keys confined
  kEndToEnd,       // payload plaintext confined between channel and disk
};

std::string_view mode_name(SecurityMode mode);

inline constexpr std::array<std::uint8_t, 8> kBlockMagic = {'E', 'N', 'C', 'D', 'P', 'T', 'H', '1'};
inline constexpr std::uint16_t kBlockVersion = 1;
/// magic(8) || version(2) || key_id(4) || payload_len(8) || iv(12) || tag(16)
inline constexpr std::size_t kBlockHeaderBytes = 50;
/// The leading fields authenticated as AAD.
inline constexpr std::size_t kBlockAadBytes = 22;

struct BlockHeader {
  std::uint16_t version = kBlockVersion;
  KeyId key_id = 0;
  std::uint64_t payload_len = 0;
  Iv96 iv{};
  Tag128 tag{};

  std::array<std::uint8_t, kBlockHeaderBytes> encode() const;
  /// IntegrityError on a short buffer, bad magic or unknown version.
  static BlockHeader decode(ByteView bytes);
  std::array<std::uint8_t, kBlockAadBytes> aad() const;
};

struct ObjectRef {
  std::filesystem::path store;
  std::uint64_t index = 0;

  std::filesystem::path file() const;
  friend bool operator==(const ObjectRef&, const ObjectRef&) = default;
};

/// A directory with one file per object, named obj-<16 hex digits>.blk.
/// Reopening a directory continues numbering after the highest index.
class BlockStore {
 public:
  BlockStore(std::filesystem::path dir, UntrustedArena& untrusted);

  ObjectRef reserve();
  /// Writes header || ciphertext atomically (temp file + rename).
  void put(const ObjectRef& ref, ByteView header, ByteView ciphertext);
  /// Reads the whole object file into the untrusted arena.
  UntrustedBuffer get(const ObjectRef& ref) const;
  std::vector<ObjectRef> list() const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  UntrustedArena& untrusted_;
  std::atomic<std::uint64_t> next_index_{0};
};

/// Write and read orchestration for both security modes.
class DataPath {
 public:
  /// Called at named points inside an operation, for tests that need to
  /// observe the untrusted arena mid-flight.
  using Probe = std::function<void(std::string_view stage)>;

  static constexpr std::size_t kDefaultRecordPayload = std::size_t{1} << 20;

  DataPath(CryptoEngine& engine, BlockStore& store);

  void set_probe(Probe probe) { probe_ = std::move(probe); }

  // KeyProtection: plaintext comes from and returns to untrusted memory.
  ObjectRef write_object(KeyId key, ByteView plaintext);
  UntrustedBuffer read_object(const ObjectRef& ref, KeyId key);

  // EndToEnd: plaintext arrives and leaves as channel records and only
  // exists in the trusted arena in between.
  ObjectRef write_object(KeyId key, TrustedSession& session, std::span<const ByteView> records);
  std::vector<UntrustedBuffer> read_object(const ObjectRef& ref, KeyId key, TrustedSession& session,
                                           std::size_t record_payload = kDefaultRecordPayload);

 private:
  struct Loaded {
    UntrustedBuffer file;
    BlockHeader header;
    ByteView ciphertext;
  };
  Loaded load(const ObjectRef& ref, KeyId key) const;
  ObjectRef persist(BlockHeader header, UntrustedBuffer& staging);
  void probe(std::string_view stage) const {
    if (probe_) probe_(stage);
  }

  CryptoEngine& engine_;
  BlockStore& store_;
  Probe probe_;
};

/// Client-side helpers: split a payload into records, join records back.
std::vector<Bytes> client_send_stream(ClientChannel& client, ByteView payload,
                                      std::size_t record_payload = DataPath::kDefaultRecordPayload);
Bytes client_recv_stream(ClientChannel& client, std::span<const UntrustedBuffer> records);

}  // namespace encdp
