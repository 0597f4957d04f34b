#pragma once

#include <stdexcept>
#include <string>

namespace lrvoter {

/// A truncation (time horizon, window, tail bound) could not be certified.
class CutoffError : public std::runtime_error {
 public:
  explicit CutoffError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace lrvoter
