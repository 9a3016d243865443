#pragma once

#include <tmsopt/error.hpp>

#include <optional>

// Kind of the tmsopt::Error thrown by f, or nullopt if it returns normally.
template <class F>
std::optional<tmsopt::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const tmsopt::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}
