#pragma once

#include <cstddef>
#include <cstdint>
#include <stop_token>

#include "encdp/error.hpp"

namespace encdp {

/// Cooperative cancellation for long operations. Checked between chunks of
/// about kControlChunk bytes; `progress`, when set, counts completed bytes
/// so a cancelled operation still reports how far it got.
struct OpControl {
  std::stop_token stop;
  std::uint64_t* progress = nullptr;

  void check() const {
    if (stop.stop_requested()) raise(Errc::kCancelled, "operation cancelled");
  }
  void advance(std::size_t n) const {
    if (progress != nullptr) *progress += n;
  }
};

inline constexpr std::size_t kControlChunk = std::size_t{1} << 20;

}  // namespace encdp
