#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace encdp {

enum class Errc {
  kDuplicateCall,
  kUnknownCall,
  kPlacementViolation,
  kOutOfEmulatedMemory,
  kBoundsError,
  kIntegrityError,
  kUnknownKey,
  kAuthError,
  kKeyInstallRejected,
  kHandshakeError,
  kRecordRejected,
  kStoreError,
  kEmptyInput,
  kHarnessError,
  kIncompleteMatrix,
  kParseError,
  kInvalidArgument,
  kCancelled,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kDuplicateCall: return "DuplicateCall";
    case Errc::kUnknownCall: return "UnknownCall";
    case Errc::kPlacementViolation: return "PlacementViolation";
    case Errc::kOutOfEmulatedMemory: return "OutOfEmulatedMemory";
    case Errc::kBoundsError: return "BoundsError";
    case Errc::kIntegrityError: return "IntegrityError";
    case Errc::kUnknownKey: return "UnknownKey";
    case Errc::kAuthError: return "AuthError";
    case Errc::kKeyInstallRejected: return "KeyInstallRejected";
    case Errc::kHandshakeError: return "HandshakeError";
    case Errc::kRecordRejected: return "RecordRejected";
    case Errc::kStoreError: return "StoreError";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kHarnessError: return "HarnessError";
    case Errc::kIncompleteMatrix: return "IncompleteMatrix";
    case Errc::kParseError: return "ParseError";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kCancelled: return "Cancelled";
  }
  return "Unknown";
}

/// Every failure raised by the library. The code identifies the contract
/// that was violated; the message carries the detail.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace encdp
