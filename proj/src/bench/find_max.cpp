#include "encdp/bench/find_max.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

// Integers may straddle piece boundaries, so a partial one is carried over.
class MaxScanner {
 public:
  explicit MaxScanner(const OpControl& control) : control_(control) {}

  void feed(ByteView piece) {
    if (since_check_ >= kControlChunk) {
      control_.check();
      since_check_ = 0;
    }
    since_check_ += piece.size();
    std::size_t pos = 0;
    if (carried_ != 0) {
      const std::size_t n = std::min(piece.size(), 4 - carried_);
      std::memcpy(carry_ + carried_, piece.data(), n);
      carried_ += n;
      pos = n;
      if (carried_ < 4) {
        control_.advance(piece.size());
        return;
      }
      take(carry_);
      carried_ = 0;
    }
    const std::uint8_t* p = piece.data() + pos;
    const std::size_t whole = (piece.size() - pos) / 4;
    std::int32_t best = best_;
    for (std::size_t i = 0; i < whole; ++i) {
      std::int32_t v;
      std::memcpy(&v, p + 4 * i, 4);
      best = std::max(best, v);
    }
    best_ = best;
    count_ += whole;
    pos += 4 * whole;
    carried_ = piece.size() - pos;
    std::memcpy(carry_, piece.data() + pos, carried_);
    control_.advance(piece.size());
  }

  std::int32_t result() const {
    if (count_ == 0) raise(Errc::kEmptyInput, "find_max needs at least one 4-byte integer");
    return best_;
  }

 private:
  void take(const std::uint8_t* p) {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    best_ = std::max(best_, v);
    ++count_;
  }

  const OpControl& control_;
  std::int32_t best_ = std::numeric_limits<std::int32_t>::min();
  std::size_t count_ = 0;
  std::uint8_t carry_[4] = {};
  std::size_t carried_ = 0;
  std::size_t since_check_ = kControlChunk;
};

static_assert(std::endian::native == std::endian::little, "find_max reads native little-endian integers");

std::int32_t scan_view(const TrustedView& view, const OpControl& control) {
  MaxScanner scan(control);
  view.visit(0, view.size(), [&](ByteView piece) { scan.feed(piece); });
  return scan.result();
}

}  // namespace

std::int32_t find_max(ByteView data, const OpControl& control) {
  MaxScanner scan(control);
  for (std::size_t pos = 0; pos < data.size(); pos += kControlChunk) {
    scan.feed(data.subspan(pos, std::min(kControlChunk, data.size() - pos)));
  }
  return scan.result();
}

FindMaxService::FindMaxService(CallGate& gate)
    : gate_(gate),
      copy_(ensure_call(gate, "find_max_copy", {{"input", BufferPlacement::kCopyIn}})),
      cleartext_(ensure_call(gate, "find_max_cleartext", {{"input", BufferPlacement::kAccessInPlace}})),
      enclave_(ensure_call(gate, "find_max_enclave", {{"input", BufferPlacement::kEnclaveLocal}})),
      load_(ensure_call(gate, "find_max_prepare",
                        {{"input", BufferPlacement::kAccessInPlace}, {"region", BufferPlacement::kEnclaveLocal}})) {}

std::int32_t FindMaxService::untrusted(ByteView data, const OpControl& control) const {
  return find_max(data, control);
}

std::int32_t FindMaxService::copy_and_compute(ByteView data, const OpControl& control) {
  if (data.size() < 4) raise(Errc::kEmptyInput, "find_max needs at least one 4-byte integer");
  const BufferRef args[] = {BufferRef::untrusted(data)};
  return gate_.trusted_call(copy_, args, control, [&](CallFrame& f) { return scan_view(f.trusted(0), control); });
}

std::int32_t FindMaxService::compute_on_cleartext(ByteView data, const OpControl& control) {
  return gate_.trusted_call(cleartext_, {BufferRef::untrusted(data)},
                            [&](CallFrame& f) { return find_max(f.input(0), control); });
}

std::int32_t FindMaxService::compute_on_enclave_memory(RegionHandle region, std::size_t length,
                                                       const OpControl& control) {
  return gate_.trusted_call(enclave_, {BufferRef::local(region, 0, length)},
                            [&](CallFrame& f) { return scan_view(f.trusted(0), control); });
}

void FindMaxService::prepare(ByteView data, RegionHandle region) {
  gate_.trusted_call(load_, {BufferRef::untrusted(data), BufferRef::local(region, 0, data.size())},
                     [](CallFrame& f) {
                       ByteView in = f.input(0);
                       std::size_t pos = 0;
                       f.trusted(1).visit_mut(0, in.size(), [&](MutableByteView piece) {
                         std::memcpy(piece.data(), in.data() + pos, piece.size());
                         pos += piece.size();
                       });
                     });
}

}  // namespace encdp::bench
