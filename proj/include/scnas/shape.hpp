#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scnas {

// Dense row-major layout, ordered batch x channels x spatial dims.
using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

inline std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

// Spatial extents, i.e. everything past batch and channels.
inline Shape spatial_of(const Shape& shape) {
  if (shape.size() < 3)
    throw std::invalid_argument("expected a batch x channels x spatial tensor, got shape " +
                                shape_string(shape));
  return Shape(shape.begin() + 2, shape.end());
}

inline std::int64_t spatial_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) n *= shape[i];
  return n;
}

// Odometer-style iteration over an N-d index box. Returns false on wrap.
inline bool advance_index(std::vector<int>& idx, const Shape& extents) {
  for (int i = static_cast<int>(extents.size()) - 1; i >= 0; --i) {
    if (++idx[i] < extents[i]) return true;
    idx[i] = 0;
  }
  return false;
}

}  // namespace scnas
