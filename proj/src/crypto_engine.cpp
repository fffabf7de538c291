#include "encdp/crypto_engine.hpp"

#include <array>
#include <cstring>
#include <limits>
#include <mutex>

#include "encdp/error.hpp"

namespace encdp {

namespace {

std::atomic<std::uint64_t> next_engine_uid{1};

struct LaneState {
  std::uint64_t engine = 0;
  std::uint32_t lane = 0;
  std::uint64_t counter = 0;
};
constexpr std::size_t kLaneCache = 8;
thread_local std::array<LaneState, kLaneCache> lane_cache;
thread_local std::size_t lane_victim = 0;

std::uint32_t random_u32() {
  std::uint8_t b[4];
  random_bytes(b);
  return load_be32(b);
}

}  // namespace

Bytes SealedRecord::serialize() const {
  Bytes out(kSealedRecordOverhead + ciphertext.size());
  std::memcpy(out.data(), iv.data(), kIvBytes);
  if (!ciphertext.empty()) std::memcpy(out.data() + kIvBytes, ciphertext.data(), ciphertext.size());
  std::memcpy(out.data() + kIvBytes + ciphertext.size(), tag.data(), kTagBytes);
  return out;
}

SealedRecord SealedRecord::parse(ByteView wire) {
  if (wire.size() < kSealedRecordOverhead) raise(Errc::kParseError, "sealed record shorter than 28 bytes");
  SealedRecord r;
  std::memcpy(r.iv.data(), wire.data(), kIvBytes);
  r.ciphertext.assign(wire.begin() + kIvBytes, wire.end() - kTagBytes);
  std::memcpy(r.tag.data(), wire.data() + wire.size() - kTagBytes, kTagBytes);
  return r;
}

std::uint32_t iv_lane(const Iv96& iv) { return load_be32(iv.data()); }
std::uint64_t iv_counter(const Iv96& iv) { return load_be64(iv.data() + 4); }

CryptoEngine::CryptoEngine(CallGate& gate, EngineConfig config)
    : gate_(gate),
      config_(config),
      uid_(next_engine_uid.fetch_add(1)),
      lane_base_(random_u32()),
      generate_call_(ensure_call(gate, "crypto.generate_key", {{"key", BufferPlacement::kEnclaveLocal}})),
      install_call_(ensure_call(gate, "crypto.install_key",
                                {{"unwrapped", BufferPlacement::kEnclaveLocal}, {"key", BufferPlacement::kEnclaveLocal}})),
      encrypt_call_(ensure_call(gate, "crypto.encrypt",
                                {{"plaintext", BufferPlacement::kAccessInPlace},
                                 {"ciphertext", BufferPlacement::kAccessInPlace},
                                 {"aad", BufferPlacement::kAccessInPlace},
                                 {"key", BufferPlacement::kEnclaveLocal}})),
      encrypt_local_call_(ensure_call(gate, "crypto.encrypt_local",
                                      {{"plaintext", BufferPlacement::kEnclaveLocal},
                                       {"ciphertext", BufferPlacement::kAccessInPlace},
                                       {"aad", BufferPlacement::kAccessInPlace},
                                       {"key", BufferPlacement::kEnclaveLocal}})),
      decrypt_call_(ensure_call(gate, "crypto.decrypt",
                                {{"ciphertext", BufferPlacement::kAccessInPlace},
                                 {"plaintext", BufferPlacement::kAccessInPlace},
                                 {"aad", BufferPlacement::kAccessInPlace},
                                 {"key", BufferPlacement::kEnclaveLocal}})),
      decrypt_local_call_(ensure_call(gate, "crypto.decrypt_local",
                                      {{"ciphertext", BufferPlacement::kAccessInPlace},
                                       {"plaintext", BufferPlacement::kEnclaveLocal},
                                       {"aad", BufferPlacement::kAccessInPlace},
                                       {"key", BufferPlacement::kEnclaveLocal}})) {
  if (config_.max_plaintext == 0 || config_.max_plaintext > kMaxGcmMessageBytes) {
    raise(Errc::kInvalidArgument, "max_plaintext out of range");
  }
}

KeyId CryptoEngine::reserve_slot(KeySlot& slot) {
  std::unique_lock lock(keys_mutex_);
  const std::size_t index = key_live_.size();
  if (index >= std::numeric_limits<KeyId>::max() - 1) raise(Errc::kInvalidArgument, "key table full");
  if (index / kKeysPerRegion >= key_regions_.size()) {
    key_regions_.emplace_back(gate_.arena(), kKeysPerRegion * kKeyBytes);
  }
  key_live_.push_back(0);
  slot = {key_regions_[index / kKeysPerRegion].handle(), (index % kKeysPerRegion) * kKeyBytes};
  return static_cast<KeyId>(index + 1);
}

void CryptoEngine::commit_slot(KeyId id) {
  std::unique_lock lock(keys_mutex_);
  key_live_[id - 1] = 1;
}

void CryptoEngine::abandon_slot(KeyId) noexcept {
  // The slot stays reserved and unusable; ids are never reissued.
}

bool CryptoEngine::has_key(KeyId id) const {
  std::shared_lock lock(keys_mutex_);
  return id != 0 && id <= key_live_.size() && key_live_[id - 1] == 1;
}

std::size_t CryptoEngine::key_count() const {
  std::shared_lock lock(keys_mutex_);
  std::size_t n = 0;
  for (auto live : key_live_) n += live;
  return n;
}

CryptoEngine::KeySlot CryptoEngine::key_slot(KeyId id) const {
  std::shared_lock lock(keys_mutex_);
  if (id == 0 || id > key_live_.size() || key_live_[id - 1] != 1) raise(Errc::kUnknownKey, std::to_string(id));
  const std::size_t index = id - 1;
  return {key_regions_[index / kKeysPerRegion].handle(), (index % kKeysPerRegion) * kKeyBytes};
}

BufferRef CryptoEngine::key_ref(KeyId id) const {
  const KeySlot slot = key_slot(id);
  return BufferRef::local(slot.region, slot.offset, kKeyBytes);
}

BufferRef CryptoEngine::local_ref(RegionHandle region, std::size_t offset, std::size_t length, KeyId id) const {
  // An empty message has no region of its own; borrow a zero-length view.
  if (length == 0 && !region.valid()) return BufferRef::local(key_slot(id).region, 0, 0);
  return BufferRef::local(region, offset, length);
}

void CryptoEngine::check_size(std::size_t n) const {
  if (n > config_.max_plaintext) {
    raise(Errc::kInvalidArgument, "message of " + std::to_string(n) + " bytes exceeds the engine maximum");
  }
}

Iv96 CryptoEngine::next_iv() {
  LaneState* state = nullptr;
  for (auto& s : lane_cache) {
    if (s.engine == uid_) {
      state = &s;
      break;
    }
  }
  if (state == nullptr || state->counter == std::numeric_limits<std::uint64_t>::max()) {
    const std::uint64_t issued = lanes_issued_.fetch_add(1);
    if (issued > std::numeric_limits<std::uint32_t>::max()) raise(Errc::kInvalidArgument, "IV lanes exhausted");
    if (state == nullptr) state = &lane_cache[lane_victim++ % kLaneCache];
    *state = {uid_, lane_base_ + static_cast<std::uint32_t>(issued), 0};
  }
  Iv96 iv;
  store_be32(iv.data(), state->lane);
  store_be64(iv.data() + 4, state->counter++);
  return iv;
}

KeyId CryptoEngine::generate_key() {
  KeySlot slot;
  const KeyId id = reserve_slot(slot);
  try {
    const BufferRef args[] = {BufferRef::local(slot.region, slot.offset, kKeyBytes)};
    gate_.trusted_call(generate_call_, args, [](CallFrame& f) {
      Key128 key;
      random_bytes(key);
      f.trusted(0).write(0, key);
      secure_wipe(key);
    });
  } catch (...) {
    abandon_slot(id);
    throw;
  }
  commit_slot(id);
  return id;
}

KeyId CryptoEngine::install_key(TrustedSession& session, ByteView wrapped_key) {
  EpcRegion unwrapped;
  try {
    if (record_payload_size(wrapped_key) != kKeyBytes) raise(Errc::kKeyInstallRejected, "wrapped key is not 16 bytes");
    unwrapped = session.trusted_recv(wrapped_key);
  } catch (const Error& e) {
    if (e.code() == Errc::kRecordRejected) raise(Errc::kKeyInstallRejected, e.what());
    throw;
  }
  KeySlot slot;
  const KeyId id = reserve_slot(slot);
  try {
    const BufferRef args[] = {BufferRef::local(unwrapped.handle(), 0, kKeyBytes),
                              BufferRef::local(slot.region, slot.offset, kKeyBytes)};
    gate_.trusted_call(install_call_, args, [](CallFrame& f) {
      Key128 key;
      f.trusted(0).read(0, key);
      f.trusted(1).write(0, key);
      secure_wipe(key);
      f.trusted(0).write(0, key);  // zeroes
    });
  } catch (...) {
    abandon_slot(id);
    throw;
  }
  commit_slot(id);
  return id;
}

RecordHeader CryptoEngine::seal(KeyId id, const Iv96& iv, ByteView plaintext, MutableByteView ciphertext, ByteView aad,
                                const OpControl& control) {
  check_size(plaintext.size());
  if (ciphertext.size() != plaintext.size()) raise(Errc::kInvalidArgument, "ciphertext buffer size mismatch");
  const BufferRef args[] = {BufferRef::untrusted(plaintext), BufferRef::untrusted(ciphertext),
                            BufferRef::untrusted(aad), key_ref(id)};
  const CipherBackend backend = config_.backend;
  return gate_.trusted_call(encrypt_call_, args, [&](CallFrame& f) {
    Key128 key;
    f.trusted(3).read(0, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_seal(key, iv, f.input(2));
    secure_wipe(key);
    const ByteView in = f.input(0);
    const MutableByteView out = f.output(1);
    for (std::size_t pos = 0; pos < in.size(); pos += kControlChunk) {
      control.check();
      const std::size_t n = std::min(kControlChunk, in.size() - pos);
      gcm.seal_update(in.subspan(pos, n), out.subspan(pos, n));
      control.advance(n);
    }
    return RecordHeader{iv, gcm.seal_finish()};
  });
}

RecordHeader CryptoEngine::encrypt(KeyId id, ByteView plaintext, MutableByteView ciphertext, ByteView aad,
                                   const OpControl& control) {
  key_slot(id);  // UnknownKey before an IV is spent
  return seal(id, next_iv(), plaintext, ciphertext, aad, control);
}

SealedRecord CryptoEngine::encrypt(KeyId id, ByteView plaintext, ByteView aad) {
  SealedRecord record;
  record.ciphertext.resize(plaintext.size());
  const RecordHeader h = encrypt(id, plaintext, record.ciphertext, aad);
  record.iv = h.iv;
  record.tag = h.tag;
  record.aad_len = aad.size();
  return record;
}

RecordHeader CryptoEngine::encrypt_with_iv(KeyId id, const Iv96& iv, ByteView plaintext, MutableByteView ciphertext,
                                           ByteView aad) {
  return seal(id, iv, plaintext, ciphertext, aad, {});
}

RecordHeader CryptoEngine::encrypt_local(KeyId id, RegionHandle region, std::size_t offset, std::size_t length,
                                         MutableByteView ciphertext, ByteView aad, const OpControl& control) {
  check_size(length);
  if (ciphertext.size() != length) raise(Errc::kInvalidArgument, "ciphertext buffer size mismatch");
  const BufferRef args[] = {local_ref(region, offset, length, id), BufferRef::untrusted(ciphertext),
                            BufferRef::untrusted(aad), key_ref(id)};
  const Iv96 iv = next_iv();
  const CipherBackend backend = config_.backend;
  return gate_.trusted_call(encrypt_local_call_, args, [&](CallFrame& f) {
    Key128 key;
    f.trusted(3).read(0, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_seal(key, iv, f.input(2));
    secure_wipe(key);
    const MutableByteView out = f.output(1);
    std::size_t pos = 0;
    std::size_t since_check = kControlChunk;
    f.trusted(0).visit(0, length, [&](ByteView piece) {
      if (since_check >= kControlChunk) {
        control.check();
        since_check = 0;
      }
      gcm.seal_update(piece, out.subspan(pos, piece.size()));
      control.advance(piece.size());
      pos += piece.size();
      since_check += piece.size();
    });
    return RecordHeader{iv, gcm.seal_finish()};
  });
}

void CryptoEngine::decrypt(KeyId id, const RecordHeader& header, ByteView ciphertext, ByteView aad,
                           MutableByteView plaintext) {
  check_size(ciphertext.size());
  if (plaintext.size() != ciphertext.size()) raise(Errc::kInvalidArgument, "plaintext buffer size mismatch");
  const BufferRef args[] = {BufferRef::untrusted(ciphertext), BufferRef::untrusted(plaintext),
                            BufferRef::untrusted(aad), key_ref(id)};
  const CipherBackend backend = config_.backend;
  gate_.trusted_call(decrypt_call_, args, [&](CallFrame& f) {
    Key128 key;
    f.trusted(3).read(0, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_verify(key, header.iv, f.input(2));
    gcm.verify_update(f.input(0));
    if (!gcm.verify_finish(header.tag)) {
      secure_wipe(key);
      raise(Errc::kAuthError, "tag mismatch");
    }
    gcm.begin_ctr(key, header.iv);
    secure_wipe(key);
    gcm.ctr_update(f.input(0), f.output(1));
  });
}

Bytes CryptoEngine::decrypt(KeyId id, const SealedRecord& record, ByteView aad) {
  Bytes out(record.ciphertext.size());
  decrypt(id, record.header(), record.ciphertext, aad, out);
  return out;
}

void CryptoEngine::decrypt_local(KeyId id, const RecordHeader& header, ByteView ciphertext, ByteView aad,
                                 RegionHandle region, std::size_t offset) {
  check_size(ciphertext.size());
  const BufferRef args[] = {BufferRef::untrusted(ciphertext), local_ref(region, offset, ciphertext.size(), id),
                            BufferRef::untrusted(aad), key_ref(id)};
  const CipherBackend backend = config_.backend;
  gate_.trusted_call(decrypt_local_call_, args, [&](CallFrame& f) {
    Key128 key;
    f.trusted(3).read(0, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_verify(key, header.iv, f.input(2));
    gcm.verify_update(f.input(0));
    if (!gcm.verify_finish(header.tag)) {
      secure_wipe(key);
      raise(Errc::kAuthError, "tag mismatch");
    }
    gcm.begin_ctr(key, header.iv);
    secure_wipe(key);
    const ByteView ct = f.input(0);
    std::size_t pos = 0;
    f.trusted(1).visit_mut(0, ct.size(), [&](MutableByteView piece) {
      gcm.ctr_update(ct.subspan(pos, piece.size()), piece);
      pos += piece.size();
    });
  });
}

}  // namespace encdp
