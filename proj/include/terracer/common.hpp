#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace terracer {

/// Extents of a dense tensor, outermost axis first (batch, channels,
/// [depth,] height, width for feature maps).
using Shape = std::vector<int>;

/// Label value marking pixels without usable ground truth. Excluded from
/// every loss and every metric.
inline constexpr uint16_t kNoDataLabel = 65535;

/// Invalid configuration: bad shapes, inconsistent model configs, bad CLI
/// or file-level settings.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corrupt or inconsistent data: unreadable files, out-of-range indices,
/// payload size mismatches.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

}  // namespace terracer
