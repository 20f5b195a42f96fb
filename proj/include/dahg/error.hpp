#pragma once

#include <stdexcept>
#include <string>

namespace dahg {

// Single exception type for recoverable failures (bad input, corrupt files,
// violated preconditions). The CLI turns these into one-line diagnostics.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dahg
