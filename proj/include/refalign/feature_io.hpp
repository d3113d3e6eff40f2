#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "refalign/errors.hpp"

namespace refalign {

// Dense f32 matrix as stored in feature files (one per image or per query).
struct FeatureMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;  // row-major

  float at(std::uint32_t r, std::uint32_t c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  bool operator==(const FeatureMatrix&) const = default;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "feature/checkpoint codecs assume a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path, const char* what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated file while reading " + what);
  return v;
}

}  // namespace detail

inline constexpr std::array<char, 4> kFeatureMagic{'D', 'G', 'F', '1'};

// Binary layout: "DGF1", u32 rows, u32 cols, rows*cols f32 row-major, little-endian.
inline FeatureMatrix load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kFeatureMagic) throw DataError(path + ": bad magic, not a DGF1 feature file");
  FeatureMatrix fm;
  fm.rows = detail::read_u32(in, path, "row count");
  fm.cols = detail::read_u32(in, path, "column count");
  const std::size_t n = static_cast<std::size_t>(fm.rows) * fm.cols;
  fm.data.resize(n);
  in.read(reinterpret_cast<char*>(fm.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw DataError(path + ": truncated payload");
  char extra = 0;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after payload");
  return fm;
}

inline void save_features(const FeatureMatrix& fm, const std::string& path) {
  if (fm.data.size() != static_cast<std::size_t>(fm.rows) * fm.cols) {
    throw DataError(path + ": matrix data size does not match declared shape");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  detail::write_u32(out, fm.rows);
  detail::write_u32(out, fm.cols);
  out.write(reinterpret_cast<const char*>(fm.data.data()),
            static_cast<std::streamsize>(fm.data.size() * sizeof(float)));
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace refalign
