#include "encdp/aes_gcm.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <algorithm>
#include <climits>
#include <cstring>

#include "encdp/error.hpp"

namespace encdp {

std::unique_ptr<GcmStream> make_portable_gcm();

std::string_view backend_name(CipherBackend backend) {
  return backend == CipherBackend::kAccelerated ? "accelerated" : "portable";
}

std::optional<CipherBackend> parse_backend(std::string_view name) {
  if (name == "accelerated") return CipherBackend::kAccelerated;
  if (name == "portable") return CipherBackend::kPortable;
  return std::nullopt;
}

bool constant_time_equal(ByteView a, ByteView b) noexcept {
  if (a.size() != b.size()) return false;
  return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

namespace {

// Fetched once; implicit fetches in EVP_*Init cost microseconds per call.
const EVP_CIPHER* fetched_cipher(const char* name) {
  EVP_CIPHER* cipher = EVP_CIPHER_fetch(nullptr, name, nullptr);
  if (cipher == nullptr) raise(Errc::kInvalidArgument, std::string("cipher unavailable: ") + name);
  return cipher;
}

const EVP_CIPHER* aes_gcm() {
  static const EVP_CIPHER* cipher = fetched_cipher("AES-128-GCM");
  return cipher;
}

const EVP_CIPHER* aes_ctr() {
  static const EVP_CIPHER* cipher = fetched_cipher("AES-128-CTR");
  return cipher;
}

void check(int rc, const char* what) {
  if (rc != 1) raise(Errc::kInvalidArgument, std::string("openssl: ") + what);
}

class AcceleratedGcm final : public GcmStream {
 public:
  AcceleratedGcm() : gcm_(EVP_CIPHER_CTX_new()), ctr_(EVP_CIPHER_CTX_new()) {
    if (gcm_ == nullptr || ctr_ == nullptr) raise(Errc::kInvalidArgument, "EVP_CIPHER_CTX_new");
  }
  ~AcceleratedGcm() override {
    EVP_CIPHER_CTX_free(gcm_);
    EVP_CIPHER_CTX_free(ctr_);
    secure_wipe({scratch_, sizeof(scratch_)});
  }
  AcceleratedGcm(const AcceleratedGcm&) = delete;
  AcceleratedGcm& operator=(const AcceleratedGcm&) = delete;

  CipherBackend backend() const noexcept override { return CipherBackend::kAccelerated; }

  void begin_seal(const Key128& key, const Iv96& iv, ByteView aad) override {
    check(EVP_EncryptInit_ex2(gcm_, aes_gcm(), key.data(), iv.data(), nullptr), "seal init");
    feed_aad(aad, /*encrypt=*/true);
    length_ = 0;
  }

  void seal_update(ByteView in, MutableByteView out) override {
    if (in.size() != out.size()) raise(Errc::kInvalidArgument, "gcm input/output size mismatch");
    account(in.size());
    for (std::size_t off = 0; off < in.size();) {
      const int n = static_cast<int>(std::min<std::size_t>(in.size() - off, kMaxUpdate));
      int outl = 0;
      check(EVP_EncryptUpdate(gcm_, out.data() + off, &outl, in.data() + off, n), "seal update");
      off += static_cast<std::size_t>(n);
    }
  }

  Tag128 seal_finish() override {
    int outl = 0;
    std::uint8_t dummy[16];
    check(EVP_EncryptFinal_ex(gcm_, dummy, &outl), "seal final");
    Tag128 tag;
    check(EVP_CIPHER_CTX_ctrl(gcm_, EVP_CTRL_GCM_GET_TAG, kTagBytes, tag.data()), "get tag");
    return tag;
  }

  void begin_verify(const Key128& key, const Iv96& iv, ByteView aad) override {
    check(EVP_DecryptInit_ex2(gcm_, aes_gcm(), key.data(), iv.data(), nullptr), "verify init");
    feed_aad(aad, /*encrypt=*/false);
    length_ = 0;
  }

  void verify_update(ByteView ciphertext) override {
    account(ciphertext.size());
    // The tag can only be checked by decrypting; the plaintext goes to a
    // private scratch buffer and is discarded.
    for (std::size_t off = 0; off < ciphertext.size();) {
      const int n = static_cast<int>(std::min(ciphertext.size() - off, sizeof(scratch_)));
      int outl = 0;
      check(EVP_DecryptUpdate(gcm_, scratch_, &outl, ciphertext.data() + off, n), "verify update");
      off += static_cast<std::size_t>(n);
    }
  }

  bool verify_finish(const Tag128& tag) override {
    Tag128 copy = tag;
    check(EVP_CIPHER_CTX_ctrl(gcm_, EVP_CTRL_GCM_SET_TAG, kTagBytes, copy.data()), "set tag");
    int outl = 0;
    const bool ok = EVP_DecryptFinal_ex(gcm_, scratch_, &outl) > 0;
    secure_wipe({scratch_, sizeof(scratch_)});
    return ok;
  }

  void begin_ctr(const Key128& key, const Iv96& iv) override {
    // GCM encrypts payload block i with counter block iv || (i + 2). A plain
    // 128-bit CTR stream from that point agrees until the low word wraps,
    // which kMaxGcmMessageBytes rules out.
    std::uint8_t counter[16];
    std::memcpy(counter, iv.data(), kIvBytes);
    store_be32(counter + 12, 2);
    check(EVP_EncryptInit_ex2(ctr_, aes_ctr(), key.data(), counter, nullptr), "ctr init");
    length_ = 0;
  }

  void ctr_update(ByteView in, MutableByteView out) override {
    if (in.size() != out.size()) raise(Errc::kInvalidArgument, "ctr input/output size mismatch");
    account(in.size());
    for (std::size_t off = 0; off < in.size();) {
      const int n = static_cast<int>(std::min<std::size_t>(in.size() - off, kMaxUpdate));
      int outl = 0;
      check(EVP_EncryptUpdate(ctr_, out.data() + off, &outl, in.data() + off, n), "ctr update");
      off += static_cast<std::size_t>(n);
    }
  }

 private:
  static constexpr std::size_t kMaxUpdate = std::size_t{1} << 30;

  void feed_aad(ByteView aad, bool encrypt) {
    for (std::size_t off = 0; off < aad.size();) {
      const int n = static_cast<int>(std::min<std::size_t>(aad.size() - off, kMaxUpdate));
      int outl = 0;
      const int rc = encrypt ? EVP_EncryptUpdate(gcm_, nullptr, &outl, aad.data() + off, n)
                             : EVP_DecryptUpdate(gcm_, nullptr, &outl, aad.data() + off, n);
      check(rc, "aad");
      off += static_cast<std::size_t>(n);
    }
  }

  void account(std::size_t n) {
    length_ += n;
    if (length_ > kMaxGcmMessageBytes) raise(Errc::kInvalidArgument, "gcm message too long");
  }

  EVP_CIPHER_CTX* gcm_;
  EVP_CIPHER_CTX* ctr_;
  std::uint64_t length_ = 0;
  std::uint8_t scratch_[16 * 1024];
};

}  // namespace

std::unique_ptr<GcmStream> make_gcm_stream(CipherBackend backend) {
  if (backend == CipherBackend::kAccelerated) return std::make_unique<AcceleratedGcm>();
  return make_portable_gcm();
}

GcmStream& gcm_stream(CipherBackend backend) {
  thread_local std::unique_ptr<GcmStream> accelerated;
  thread_local std::unique_ptr<GcmStream> portable;
  auto& slot = backend == CipherBackend::kAccelerated ? accelerated : portable;
  if (!slot) slot = make_gcm_stream(backend);
  return *slot;
}

namespace {

// Separate from gcm_stream() so a one-shot call made while a caller is
// mid-stream (an EPC fault inside a streaming encryption) cannot clobber it.
GcmStream& oneshot_stream(CipherBackend backend) {
  thread_local std::unique_ptr<GcmStream> accelerated;
  thread_local std::unique_ptr<GcmStream> portable;
  auto& slot = backend == CipherBackend::kAccelerated ? accelerated : portable;
  if (!slot) slot = make_gcm_stream(backend);
  return *slot;
}

}  // namespace

Tag128 gcm_seal(CipherBackend backend, const Key128& key, const Iv96& iv, ByteView aad,
                ByteView plaintext, MutableByteView out) {
  GcmStream& s = oneshot_stream(backend);
  s.begin_seal(key, iv, aad);
  s.seal_update(plaintext, out);
  return s.seal_finish();
}

bool gcm_open(CipherBackend backend, const Key128& key, const Iv96& iv, ByteView aad,
              ByteView ciphertext, const Tag128& tag, MutableByteView out) {
  if (ciphertext.size() != out.size()) {
    raise(Errc::kInvalidArgument, "gcm input/output size mismatch");
  }
  GcmStream& s = oneshot_stream(backend);
  s.begin_verify(key, iv, aad);
  s.verify_update(ciphertext);
  if (!s.verify_finish(tag)) return false;
  s.begin_ctr(key, iv);
  s.ctr_update(ciphertext, out);
  return true;
}

}  // namespace encdp
