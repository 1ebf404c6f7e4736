#pragma once

#include <doctest.h>

#include "qsvpn/common/error.hpp"

// Asserts that `expr` throws qsvpn::Error carrying `expected_code`.
#define CHECK_ERROR(expr, expected_code)                                              \
  do {                                                                                \
    bool qsvpn_threw_ = false;                                                        \
    try {                                                                             \
      (void)(expr);                                                                   \
    } catch (const ::qsvpn::Error& qsvpn_err_) {                                      \
      qsvpn_threw_ = true;                                                            \
      CHECK_MESSAGE(qsvpn_err_.code() == (expected_code), qsvpn_err_.what());         \
    }                                                                                 \
    CHECK_MESSAGE(qsvpn_threw_, "expected " << ::qsvpn::to_string(expected_code));    \
  } while (0)
