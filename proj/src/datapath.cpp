#include "encdp/datapath.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <memory>
#include <system_error>

#include "encdp/error.hpp"

namespace encdp {

namespace fs = std::filesystem;

std::string_view mode_name(SecurityMode mode) {
  return mode == SecurityMode::kKeyProtection ? "key_protection" : "end_to_end";
}

std::array<std::uint8_t, kBlockHeaderBytes> BlockHeader::encode() const {
  std::array<std::uint8_t, kBlockHeaderBytes> out{};
  std::memcpy(out.data(), kBlockMagic.data(), 8);
  store_le<std::uint16_t>(out.data() + 8, version);
  store_le<std::uint32_t>(out.data() + 10, key_id);
  store_le<std::uint64_t>(out.data() + 14, payload_len);
  std::memcpy(out.data() + 22, iv.data(), kIvBytes);
  std::memcpy(out.data() + 34, tag.data(), kTagBytes);
  return out;
}

std::array<std::uint8_t, kBlockAadBytes> BlockHeader::aad() const {
  const auto full = encode();
  std::array<std::uint8_t, kBlockAadBytes> out;
  std::memcpy(out.data(), full.data(), kBlockAadBytes);
  return out;
}

BlockHeader BlockHeader::decode(ByteView bytes) {
  if (bytes.size() < kBlockHeaderBytes) raise(Errc::kIntegrityError, "block shorter than its header");
  if (std::memcmp(bytes.data(), kBlockMagic.data(), 8) != 0) raise(Errc::kIntegrityError, "bad block magic");
  BlockHeader h;
  h.version = load_le<std::uint16_t>(bytes.data() + 8);
  if (h.version != kBlockVersion) raise(Errc::kIntegrityError, "unsupported block version");
  h.key_id = load_le<std::uint32_t>(bytes.data() + 10);
  h.payload_len = load_le<std::uint64_t>(bytes.data() + 14);
  std::memcpy(h.iv.data(), bytes.data() + 22, kIvBytes);
  std::memcpy(h.tag.data(), bytes.data() + 34, kTagBytes);
  return h;
}

fs::path ObjectRef::file() const {
  char name[32];
  std::snprintf(name, sizeof(name), "obj-%016" PRIx64 ".blk", index);
  return store / name;
}

namespace {

std::optional<std::uint64_t> parse_object_name(const std::string& name) {
  if (name.size() != 24 || name.compare(0, 4, "obj-") != 0 || name.compare(20, 4, ".blk") != 0) return std::nullopt;
  std::uint64_t v = 0;
  for (std::size_t i = 4; i < 20; ++i) {
    const char c = name[i];
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else return std::nullopt;
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void store_error(const std::string& what, const fs::path& path) {
  raise(Errc::kStoreError, what + ": " + path.string() + ": " + std::strerror(errno));
}

}  // namespace

BlockStore::BlockStore(fs::path dir, UntrustedArena& untrusted) : dir_(std::move(dir)), untrusted_(untrusted) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) raise(Errc::kStoreError, "cannot create store directory " + dir_.string());
  std::uint64_t next = 0;
  for (const ObjectRef& r : list()) next = std::max(next, r.index + 1);
  next_index_ = next;
}

ObjectRef BlockStore::reserve() { return ObjectRef{dir_, next_index_.fetch_add(1)}; }

void BlockStore::put(const ObjectRef& ref, ByteView header, ByteView ciphertext) {
  const fs::path final_path = ref.file();
  fs::path tmp = final_path;
  tmp += ".tmp";
  {
    File f(std::fopen(tmp.c_str(), "wb"));
    if (!f) store_error("open", tmp);
    if (std::fwrite(header.data(), 1, header.size(), f.get()) != header.size() ||
        (!ciphertext.empty() && std::fwrite(ciphertext.data(), 1, ciphertext.size(), f.get()) != ciphertext.size())) {
      store_error("write", tmp);
    }
    if (std::fflush(f.get()) != 0) store_error("flush", tmp);
  }
  std::error_code ec;
  fs::rename(tmp, final_path, ec);
  if (ec) raise(Errc::kStoreError, "rename " + tmp.string() + ": " + ec.message());
}

UntrustedBuffer BlockStore::get(const ObjectRef& ref) const {
  const fs::path path = ref.file();
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) store_error("open", path);
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) raise(Errc::kStoreError, "stat " + path.string() + ": " + ec.message());
  UntrustedBuffer buf = untrusted_.allocate(size, "stored block");
  if (size != 0 && std::fread(buf.data(), 1, size, f.get()) != size) store_error("read", path);
  return buf;
}

std::vector<ObjectRef> BlockStore::list() const {
  std::vector<ObjectRef> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_, ec)) {
    if (auto index = parse_object_name(entry.path().filename().string())) out.push_back({dir_, *index});
  }
  if (ec) raise(Errc::kStoreError, "list " + dir_.string() + ": " + ec.message());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

DataPath::DataPath(CryptoEngine& engine, BlockStore& store) : engine_(engine), store_(store) {}

ObjectRef DataPath::persist(BlockHeader header, UntrustedBuffer& staging) {
  const auto encoded = header.encode();
  std::memcpy(staging.data(), encoded.data(), encoded.size());
  const ObjectRef ref = store_.reserve();
  store_.put(ref, ByteView(staging.data(), kBlockHeaderBytes),
             ByteView(staging.data() + kBlockHeaderBytes, header.payload_len));
  return ref;
}

ObjectRef DataPath::write_object(KeyId key, ByteView plaintext) {
  BlockHeader header;
  header.key_id = key;
  header.payload_len = plaintext.size();
  UntrustedBuffer staging = engine_.gate().arena().untrusted().allocate(kBlockHeaderBytes + plaintext.size(), "block");
  const auto aad = header.aad();
  const RecordHeader rec =
      engine_.encrypt(key, plaintext, staging.span().subspan(kBlockHeaderBytes), aad);
  header.iv = rec.iv;
  header.tag = rec.tag;
  probe("encrypted");
  return persist(header, staging);
}

ObjectRef DataPath::write_object(KeyId key, TrustedSession& session, std::span<const ByteView> records) {
  std::size_t total = 0;
  for (ByteView r : records) total += record_payload_size(r);
  if (!engine_.has_key(key)) raise(Errc::kUnknownKey, std::to_string(key));

  EpcRegion plain(engine_.gate().arena(), total);
  std::size_t offset = 0;
  for (ByteView r : records) offset += session.trusted_recv_into(r, plain.handle(), offset);
  probe("received");

  BlockHeader header;
  header.key_id = key;
  header.payload_len = total;
  UntrustedBuffer staging = engine_.gate().arena().untrusted().allocate(kBlockHeaderBytes + total, "block");
  const auto aad = header.aad();
  const RecordHeader rec =
      engine_.encrypt_local(key, plain.handle(), 0, total, staging.span().subspan(kBlockHeaderBytes), aad);
  header.iv = rec.iv;
  header.tag = rec.tag;
  probe("encrypted");
  return persist(header, staging);
}

DataPath::Loaded DataPath::load(const ObjectRef& ref, KeyId key) const {
  Loaded l{store_.get(ref), {}, {}};
  l.header = BlockHeader::decode(l.file.view());
  if (l.header.payload_len != l.file.size() - kBlockHeaderBytes) {
    raise(Errc::kIntegrityError, "payload length does not match the stored block");
  }
  if (!engine_.has_key(key)) raise(Errc::kUnknownKey, std::to_string(key));
  if (l.header.key_id != key) raise(Errc::kIntegrityError, "block was written under another key");
  l.ciphertext = l.file.view().subspan(kBlockHeaderBytes);
  return l;
}

UntrustedBuffer DataPath::read_object(const ObjectRef& ref, KeyId key) {
  const Loaded l = load(ref, key);
  UntrustedBuffer out = engine_.gate().arena().untrusted().allocate(l.ciphertext.size(), "read payload");
  try {
    engine_.decrypt(key, {l.header.iv, l.header.tag}, l.ciphertext, l.header.aad(), out.span());
  } catch (const Error& e) {
    if (e.code() == Errc::kAuthError) raise(Errc::kIntegrityError, "stored block failed authentication");
    throw;
  }
  probe("decrypted");
  return out;
}

std::vector<UntrustedBuffer> DataPath::read_object(const ObjectRef& ref, KeyId key, TrustedSession& session,
                                                   std::size_t record_payload) {
  if (record_payload == 0) raise(Errc::kInvalidArgument, "record payload must be positive");
  const Loaded l = load(ref, key);
  EpcRegion plain(engine_.gate().arena(), l.ciphertext.size());
  try {
    engine_.decrypt_local(key, {l.header.iv, l.header.tag}, l.ciphertext, l.header.aad(), plain.handle(), 0);
  } catch (const Error& e) {
    if (e.code() == Errc::kAuthError) raise(Errc::kIntegrityError, "stored block failed authentication");
    throw;
  }
  probe("decrypted");
  std::vector<UntrustedBuffer> records;
  const std::size_t total = plain.size();
  std::size_t offset = 0;
  do {
    const std::size_t n = std::min(record_payload, total - offset);
    records.push_back(session.trusted_send(plain.handle(), offset, n));
    offset += n;
  } while (offset < total);
  probe("sent");
  return records;
}

std::vector<Bytes> client_send_stream(ClientChannel& client, ByteView payload, std::size_t record_payload) {
  if (record_payload == 0) raise(Errc::kInvalidArgument, "record payload must be positive");
  std::vector<Bytes> records;
  std::size_t offset = 0;
  do {
    const std::size_t n = std::min(record_payload, payload.size() - offset);
    records.push_back(client.send(payload.subspan(offset, n)));
    offset += n;
  } while (offset < payload.size());
  return records;
}

Bytes client_recv_stream(ClientChannel& client, std::span<const UntrustedBuffer> records) {
  Bytes out;
  for (const UntrustedBuffer& r : records) {
    const Bytes part = client.recv(r.view());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace encdp
