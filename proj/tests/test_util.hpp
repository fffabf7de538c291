#pragma once

#include <gtest/gtest.h>

#include "encdp/error.hpp"

namespace encdp::testing {

/// Runs f and returns the code of the encdp::Error it throws.
template <class F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::kInvalidArgument;
}

}  // namespace encdp::testing
