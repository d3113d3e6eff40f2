#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refalign/errors.hpp"

namespace refalign {

// Row-major binary image; data[r * width + c] is 0 or 1.
struct Bitmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
  }
  void set(int r, int c, std::uint8_t v) {
    data[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)] = v;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  bool operator==(const Bitmap&) const = default;
};

// Uncompressed run-length mask. Runs alternate background/foreground in
// row-major pixel order and start with a background run, which may be 0
// when the first pixel is foreground.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;

  bool operator==(const Mask&) const = default;
};

inline void validate_mask(const Mask& m, const std::string& path = "mask") {
  if (m.height < 1 || m.width < 1) {
    throw DataError(path + ": dimensions must be at least 1x1");
  }
  std::int64_t total = 0;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    if (m.counts[i] < 0) {
      throw DataError(path + ".counts[" + std::to_string(i) + "]: negative run length");
    }
    total += m.counts[i];
  }
  if (total != static_cast<std::int64_t>(m.height) * m.width) {
    throw DataError(path + ".counts: RLE sum mismatch");
  }
}

inline Bitmap mask_decode(const Mask& m) {
  validate_mask(m);
  Bitmap b{m.height, m.width, std::vector<std::uint8_t>(static_cast<std::size_t>(m.height) * m.width, 0)};
  std::size_t pos = 0;
  std::uint8_t value = 0;  // runs start with background
  for (const auto count : m.counts) {
    for (std::int64_t k = 0; k < count; ++k) b.data[pos++] = value;
    value = static_cast<std::uint8_t>(1 - value);
  }
  return b;
}

// Canonical encoding: first run is background (possibly 0), every later run
// is positive, and the sequence ends at the last pixel.
inline Mask mask_encode(const Bitmap& b) {
  if (b.height < 1 || b.width < 1) throw DataError("bitmap: empty");
  if (b.data.size() != b.pixels()) throw DataError("bitmap: data size does not match dimensions");
  Mask m{b.height, b.width, {}};
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (const auto px : b.data) {
    const std::uint8_t v = px ? 1 : 0;
    if (v == current) {
      ++run;
    } else {
      m.counts.push_back(run);
      current = v;
      run = 1;
    }
  }
  m.counts.push_back(run);
  return m;
}

// Foreground pixel count, straight off the run list.
inline std::int64_t mask_area(const Mask& m) {
  std::int64_t area = 0;
  for (std::size_t i = 1; i < m.counts.size(); i += 2) area += m.counts[i];
  return area;
}

}  // namespace refalign
