#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgf {

using Shape = std::vector<int64_t>;

/// Shape/extent mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse: backward on a non-scalar, a consumed tape, a missing gradient.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File parse/serialization failure; carries the byte offset where it occurred.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& msg, int64_t byte_offset = -1)
      : std::runtime_error(byte_offset >= 0
                               ? msg + " (byte offset " + std::to_string(byte_offset) + ")"
                               : msg),
        offset_(byte_offset) {}
  int64_t byte_offset() const { return offset_; }

 private:
  int64_t offset_;
};

/// Bad key, value, or flag in a config file or invocation.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

}  // namespace dgf
