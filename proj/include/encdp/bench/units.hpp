#pragma once

#include <chrono>
#include <cstdint>
#include <string_view>

namespace encdp::bench {

/// "4096", "4K", "1M", "256M", "1G"; binary multiples. InvalidArgument on
/// anything else or on overflow.
std::uint64_t parse_size(std::string_view text);

/// "0", "500ns", "10us", "200ms", "2s". InvalidArgument on anything else.
std::chrono::nanoseconds parse_duration(std::string_view text);

}  // namespace encdp::bench
