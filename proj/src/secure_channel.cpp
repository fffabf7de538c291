#include "encdp/secure_channel.hpp"

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/kdf.h>

#include <cstring>

#include "encdp/error.hpp"

namespace encdp {

struct EphemeralKey::Impl {
  EVP_PKEY* pkey = nullptr;
  ~Impl() { EVP_PKEY_free(pkey); }
};

EphemeralKey::EphemeralKey(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
EphemeralKey::EphemeralKey(EphemeralKey&&) noexcept = default;
EphemeralKey& EphemeralKey::operator=(EphemeralKey&&) noexcept = default;
EphemeralKey::~EphemeralKey() = default;

EphemeralKey EphemeralKey::generate() {
  auto impl = std::make_unique<Impl>();
  impl->pkey = EVP_PKEY_Q_keygen(nullptr, nullptr, "X25519");
  if (impl->pkey == nullptr) raise(Errc::kHandshakeError, "X25519 key generation failed");
  EphemeralKey key(std::move(impl));
  std::size_t len = key.public_.size();
  if (EVP_PKEY_get_raw_public_key(key.impl_->pkey, key.public_.data(), &len) != 1 || len != key.public_.size()) {
    raise(Errc::kHandshakeError, "cannot export X25519 public key");
  }
  return key;
}

void EphemeralKey::agree(const GroupElement& peer, MutableByteView shared_out) const {
  if (shared_out.size() != kGroupElementBytes) raise(Errc::kInvalidArgument, "shared secret is 32 bytes");
  EVP_PKEY* peer_key = EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer.data(), peer.size());
  if (peer_key == nullptr) raise(Errc::kHandshakeError, "malformed X25519 element");
  EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new(impl_->pkey, nullptr);
  std::size_t len = shared_out.size();
  const bool ok = ctx != nullptr && EVP_PKEY_derive_init(ctx) == 1 && EVP_PKEY_derive_set_peer(ctx, peer_key) == 1 &&
                  EVP_PKEY_derive(ctx, shared_out.data(), &len) == 1 && len == shared_out.size();
  EVP_PKEY_CTX_free(ctx);
  EVP_PKEY_free(peer_key);
  if (!ok) {
    secure_wipe(shared_out);
    raise(Errc::kHandshakeError, "X25519 agreement failed");
  }
  // Contributory behaviour: a low-order peer element forces an all-zero secret.
  static constexpr std::uint8_t kZero[kGroupElementBytes] = {};
  if (constant_time_equal(shared_out, ByteView(kZero, sizeof(kZero)))) {
    raise(Errc::kHandshakeError, "low-order X25519 element");
  }
}

SessionKeys derive_session_keys(ByteView shared, const GroupElement& client_pub, const GroupElement& server_pub) {
  std::uint8_t salt[2 * kGroupElementBytes];
  std::memcpy(salt, client_pub.data(), kGroupElementBytes);
  std::memcpy(salt + kGroupElementBytes, server_pub.data(), kGroupElementBytes);

  EVP_KDF* kdf = EVP_KDF_fetch(nullptr, "HKDF", nullptr);
  EVP_KDF_CTX* ctx = kdf ? EVP_KDF_CTX_new(kdf) : nullptr;
  EVP_KDF_free(kdf);
  if (ctx == nullptr) raise(Errc::kHandshakeError, "HKDF unavailable");

  char digest[] = "SHA256";
  OSSL_PARAM params[] = {
      OSSL_PARAM_construct_utf8_string(OSSL_KDF_PARAM_DIGEST, digest, 0),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_KEY, const_cast<std::uint8_t*>(shared.data()), shared.size()),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_SALT, salt, sizeof(salt)),
      OSSL_PARAM_construct_octet_string(OSSL_KDF_PARAM_INFO, const_cast<char*>(kChannelLabel.data()),
                                        kChannelLabel.size()),
      OSSL_PARAM_construct_end(),
  };
  std::uint8_t okm[2 * kKeyBytes];
  const bool ok = EVP_KDF_derive(ctx, okm, sizeof(okm), params) == 1;
  EVP_KDF_CTX_free(ctx);
  if (!ok) raise(Errc::kHandshakeError, "HKDF failed");

  SessionKeys keys;
  std::memcpy(keys.client_to_server.data(), okm, kKeyBytes);
  std::memcpy(keys.server_to_client.data(), okm + kKeyBytes, kKeyBytes);
  secure_wipe({okm, sizeof(okm)});
  return keys;
}

Bytes encode_hello(const GroupElement& element) {
  Bytes out(kHelloBytes);
  out[0] = 0;
  out[1] = static_cast<std::uint8_t>(kGroupElementBytes);
  std::memcpy(out.data() + 2, element.data(), element.size());
  return out;
}

GroupElement decode_hello(ByteView message) {
  if (message.size() < 2) raise(Errc::kHandshakeError, "truncated hello");
  const std::size_t len = (std::size_t{message[0]} << 8) | message[1];
  if (len != kGroupElementBytes || message.size() != 2 + len) {
    raise(Errc::kHandshakeError, "hello must carry one 32-byte X25519 element");
  }
  GroupElement element;
  std::memcpy(element.data(), message.data() + 2, element.size());
  return element;
}

Iv96 record_iv(Direction direction, std::uint64_t sequence) {
  Iv96 iv;
  store_be32(iv.data(), static_cast<std::uint32_t>(direction));
  store_be64(iv.data() + 4, sequence);
  return iv;
}

std::size_t record_payload_size(ByteView record) {
  if (record.size() < kRecordOverhead) raise(Errc::kRecordRejected, "record shorter than its framing");
  return record.size() - kRecordOverhead;
}

namespace {

struct ParsedRecord {
  std::uint64_t sequence;
  Iv96 iv;
  ByteView ciphertext;
  Tag128 tag;
};

ParsedRecord parse_record(ByteView record) {
  const std::size_t n = record_payload_size(record);
  ParsedRecord r;
  r.sequence = load_be64(record.data());
  std::memcpy(r.iv.data(), record.data() + 8, kIvBytes);
  r.ciphertext = record.subspan(kRecordHeaderBytes, n);
  std::memcpy(r.tag.data(), record.data() + kRecordHeaderBytes + n, kTagBytes);
  return r;
}

/// Checks sequence order and the IV binding; the tag is checked by the caller.
void check_order(const ParsedRecord& r, Direction direction, const std::optional<std::uint64_t>& last) {
  if (last && r.sequence <= *last) raise(Errc::kRecordRejected, "replayed or reordered record");
  if (r.iv != record_iv(direction, r.sequence)) raise(Errc::kRecordRejected, "record IV does not match sequence");
}

void write_record_header(std::uint8_t* out, std::uint64_t seq, const Iv96& iv) {
  store_be64(out, seq);
  std::memcpy(out + 8, iv.data(), kIvBytes);
}

}  // namespace

ClientChannel::ClientChannel(CipherBackend backend) : backend_(backend), ephemeral_(EphemeralKey::generate()) {}

Bytes ClientChannel::hello() const { return encode_hello(ephemeral_.public_key()); }

void ClientChannel::complete(ByteView server_hello) {
  if (keys_) raise(Errc::kHandshakeError, "session already established");
  const GroupElement server_pub = decode_hello(server_hello);
  std::uint8_t shared[kGroupElementBytes];
  ephemeral_.agree(server_pub, {shared, sizeof(shared)});
  keys_ = derive_session_keys({shared, sizeof(shared)}, ephemeral_.public_key(), server_pub);
  secure_wipe({shared, sizeof(shared)});
}

const SessionKeys& ClientChannel::keys() const {
  if (!keys_) raise(Errc::kHandshakeError, "session not established");
  return *keys_;
}

Bytes ClientChannel::send(ByteView plaintext) {
  const SessionKeys& k = keys();
  const std::uint64_t seq = send_seq_++;
  const Iv96 iv = record_iv(Direction::kClientToServer, seq);
  Bytes record(plaintext.size() + kRecordOverhead);
  write_record_header(record.data(), seq, iv);
  const Tag128 tag = gcm_seal(backend_, k.client_to_server, iv, ByteView(record.data(), 8), plaintext,
                              MutableByteView(record.data() + kRecordHeaderBytes, plaintext.size()));
  std::memcpy(record.data() + kRecordHeaderBytes + plaintext.size(), tag.data(), kTagBytes);
  return record;
}

Bytes ClientChannel::recv(ByteView record) {
  const SessionKeys& k = keys();
  const ParsedRecord r = parse_record(record);
  check_order(r, Direction::kServerToClient, last_recv_seq_);
  Bytes out(r.ciphertext.size());
  if (!gcm_open(backend_, k.server_to_client, r.iv, record.first(8), r.ciphertext, r.tag, out)) {
    raise(Errc::kRecordRejected, "record failed authentication");
  }
  last_recv_seq_ = r.sequence;
  return out;
}

TrustedChannel::TrustedChannel(CallGate& gate, CipherBackend backend)
    : gate_(gate),
      backend_(backend),
      handshake_call_(ensure_call(gate, "channel.handshake",
                                  {{"client_hello", BufferPlacement::kAccessInPlace},
                                   {"server_hello", BufferPlacement::kAccessInPlace},
                                   {"session_keys", BufferPlacement::kEnclaveLocal}})),
      recv_call_(ensure_call(gate, "channel.recv",
                             {{"record", BufferPlacement::kAccessInPlace},
                              {"plaintext", BufferPlacement::kEnclaveLocal},
                              {"session_keys", BufferPlacement::kEnclaveLocal}})),
      send_call_(ensure_call(gate, "channel.send",
                             {{"plaintext", BufferPlacement::kEnclaveLocal},
                              {"record", BufferPlacement::kAccessInPlace},
                              {"session_keys", BufferPlacement::kEnclaveLocal}})) {}

std::unique_ptr<TrustedSession> TrustedChannel::accept(ByteView client_hello) {
  std::unique_ptr<TrustedSession> session(new TrustedSession(*this, next_session_.fetch_add(1)));
  session->server_hello_.assign(kHelloBytes, 0);
  const BufferRef args[] = {
      BufferRef::untrusted(client_hello),
      BufferRef::untrusted(MutableByteView(session->server_hello_)),
      BufferRef::local(session->keys_.handle(), 0, 2 * kKeyBytes),
  };
  gate_.trusted_call(handshake_call_, args, [](CallFrame& f) {
    const GroupElement client_pub = decode_hello(f.input(0));
    const EphemeralKey server_key = EphemeralKey::generate();
    std::uint8_t shared[kGroupElementBytes];
    server_key.agree(client_pub, {shared, sizeof(shared)});
    SessionKeys keys = derive_session_keys({shared, sizeof(shared)}, client_pub, server_key.public_key());
    secure_wipe({shared, sizeof(shared)});
    f.trusted(2).write(0, keys.client_to_server);
    f.trusted(2).write(kKeyBytes, keys.server_to_client);
    secure_wipe({reinterpret_cast<std::uint8_t*>(&keys), sizeof(keys)});
    const Bytes hello = encode_hello(server_key.public_key());
    std::memcpy(f.output(1).data(), hello.data(), hello.size());
  });
  return session;
}

TrustedSession::TrustedSession(TrustedChannel& channel, std::uint64_t id)
    : channel_(channel), id_(id), keys_(channel.gate_.arena(), 2 * kKeyBytes) {}

EpcRegion TrustedSession::trusted_recv(ByteView record) {
  EpcRegion out(channel_.gate_.arena(), record_payload_size(record));
  trusted_recv_into(record, out.handle(), 0);
  return out;
}

std::size_t TrustedSession::trusted_recv_into(ByteView record, RegionHandle region, std::size_t offset) {
  const std::size_t n = record_payload_size(record);
  std::lock_guard lock(recv_mutex_);
  const BufferRef args[] = {
      BufferRef::untrusted(record),
      n == 0 && !region.valid() ? BufferRef::local(keys_.handle(), 0, 0) : BufferRef::local(region, offset, n),
      BufferRef::local(keys_.handle(), 0, 2 * kKeyBytes),
  };
  const CipherBackend backend = channel_.backend_;
  channel_.gate_.trusted_call(channel_.recv_call_, args, [&](CallFrame& f) {
    const ParsedRecord r = parse_record(f.input(0));
    check_order(r, Direction::kClientToServer, last_recv_seq_);
    Key128 key;
    f.trusted(2).read(0, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_verify(key, r.iv, f.input(0).first(8));
    gcm.verify_update(r.ciphertext);
    if (!gcm.verify_finish(r.tag)) {
      secure_wipe(key);
      raise(Errc::kRecordRejected, "record failed authentication");
    }
    gcm.begin_ctr(key, r.iv);
    secure_wipe(key);
    std::size_t pos = 0;
    f.trusted(1).visit_mut(0, n, [&](MutableByteView piece) {
      gcm.ctr_update(r.ciphertext.subspan(pos, piece.size()), piece);
      pos += piece.size();
    });
    last_recv_seq_ = r.sequence;
  });
  return n;
}

UntrustedBuffer TrustedSession::trusted_send(RegionHandle region, std::size_t offset, std::size_t length) {
  UntrustedBuffer record = channel_.gate_.arena().untrusted().allocate(length + kRecordOverhead, "channel record");
  std::lock_guard lock(send_mutex_);
  const BufferRef args[] = {
      length == 0 && !region.valid() ? BufferRef::local(keys_.handle(), 0, 0) : BufferRef::local(region, offset, length),
      BufferRef::untrusted(record.span()),
      BufferRef::local(keys_.handle(), 0, 2 * kKeyBytes),
  };
  const CipherBackend backend = channel_.backend_;
  const std::uint64_t seq = send_seq_;
  channel_.gate_.trusted_call(channel_.send_call_, args, [&](CallFrame& f) {
    const MutableByteView out = f.output(1);
    const Iv96 iv = record_iv(Direction::kServerToClient, seq);
    write_record_header(out.data(), seq, iv);
    Key128 key;
    f.trusted(2).read(kKeyBytes, key);
    GcmStream& gcm = gcm_stream(backend);
    gcm.begin_seal(key, iv, out.first(8));
    secure_wipe(key);
    std::size_t pos = 0;
    f.trusted(0).visit(0, length, [&](ByteView piece) {
      gcm.seal_update(piece, out.subspan(kRecordHeaderBytes + pos, piece.size()));
      pos += piece.size();
    });
    const Tag128 tag = gcm.seal_finish();
    std::memcpy(out.data() + kRecordHeaderBytes + length, tag.data(), kTagBytes);
  });
  ++send_seq_;
  return record;
}

}  // namespace encdp
