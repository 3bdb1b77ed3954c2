#pragma once

#include <stdexcept>
#include <string>

namespace rpmf {

/// Problems with input data or files; the CLI maps these to exit code 1.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad arguments to an operation (caller bug rather than bad data).
struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace rpmf
