#include "encdp/bench/units.hpp"

#include <charconv>
#include <limits>
#include <string>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

std::uint64_t leading_number(std::string_view text, std::string_view& rest, std::string_view what) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr == text.data()) {
    raise(Errc::kInvalidArgument, "bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  rest = text.substr(static_cast<std::size_t>(r.ptr - text.data()));
  return v;
}

std::uint64_t scaled(std::uint64_t v, std::uint64_t factor, std::string_view text) {
  if (v > std::numeric_limits<std::uint64_t>::max() / factor) {
    raise(Errc::kInvalidArgument, "'" + std::string(text) + "' is too large");
  }
  return v * factor;
}

}  // namespace

std::uint64_t parse_size(std::string_view text) {
  std::string_view unit;
  const std::uint64_t v = leading_number(text, unit, "size");
  if (unit.empty()) return v;
  if (unit == "K" || unit == "KiB") return scaled(v, std::uint64_t{1} << 10, text);
  if (unit == "M" || unit == "MiB") return scaled(v, std::uint64_t{1} << 20, text);
  if (unit == "G" || unit == "GiB") return scaled(v, std::uint64_t{1} << 30, text);
  raise(Errc::kInvalidArgument, "bad size unit in '" + std::string(text) + "'");
}

std::chrono::nanoseconds parse_duration(std::string_view text) {
  std::string_view unit;
  const std::uint64_t v = leading_number(text, unit, "duration");
  std::uint64_t ns = 0;
  if (unit == "ns" || (unit.empty() && v == 0)) {
    ns = v;
  } else if (unit == "us") {
    ns = scaled(v, 1000, text);
  } else if (unit == "ms") {
    ns = scaled(v, 1000000, text);
  } else if (unit == "s") {
    ns = scaled(v, 1000000000, text);
  } else {
    raise(Errc::kInvalidArgument, "duration '" + std::string(text) + "' needs a unit (ns, us, ms, s)");
  }
  if (ns > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    raise(Errc::kInvalidArgument, "'" + std::string(text) + "' is too large");
  }
  return std::chrono::nanoseconds(static_cast<std::int64_t>(ns));
}

}  // namespace encdp::bench
