#pragma once

#include <stdexcept>

namespace tabrec {

/// Malformed HTML, token streams, annotation lines or files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tabrec
