#pragma once
// Configuration failures carry the violated invariant in the message so a
// batch driver can print them verbatim and exit.

#include <stdexcept>
#include <string>

namespace ks {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ks
