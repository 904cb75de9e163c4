#pragma once

#include <functional>

#include "cme/errors.hpp"
#include "doctest.h"

namespace cme::testing {

inline bool throws_code(const std::function<void()>& fn, ErrorCode code) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

}  // namespace cme::testing

#define CHECK_ERROR_CODE(expr, code) \
  CHECK(::cme::testing::throws_code([&] { (void)(expr); }, ::cme::ErrorCode::code))
