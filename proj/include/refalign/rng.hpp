#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace refalign::rng {

using Engine = std::mt19937_64;

// Uniform integer in [0, n). std::uniform_int_distribution is
// implementation-defined, so sampling is done by rejection on the raw
// engine output to keep sequences identical across toolchains.
inline std::uint64_t bounded(Engine& eng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("rng::bounded: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t x = eng();
    if (x >= threshold) return x % n;
  }
}

// Uniform double in [0, 1) with 53 random bits.
inline double unit(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * unit(eng);
}

// Fisher-Yates shuffle driven by bounded().
template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(bounded(eng, i))]);
  }
}

// k distinct indices drawn uniformly from [0, n), returned ascending.
inline std::vector<int> sample_indices(int n, int k, Engine& eng) {
  if (k < 0 || k > n) throw std::invalid_argument("rng::sample_indices: k out of range");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(bounded(eng, static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace refalign::rng
