#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace uwbseq {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent generator per (seed, purpose): every random consumer draws
// from its own named stream so adding draws in one place never shifts another.
inline std::mt19937_64 named_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  const std::uint64_t s = splitmix64(splitmix64(seed ^ fnv1a64(purpose)) + index);
  return std::mt19937_64(s);
}

// Portable uniform draw in [0,1); std::uniform_real_distribution is not
// specified bit-exactly across standard libraries.
inline double uniform01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& g, double lo, double hi) { return lo + (hi - lo) * uniform01(g); }

}  // namespace uwbseq

namespace uwbseq {

// Box-Muller on the portable uniform; one draw per call (the sine branch is discarded).
inline double gaussian(std::mt19937_64& g) {
  double u1 = uniform01(g);
  const double u2 = uniform01(g);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline double exponential(std::mt19937_64& g, double mean) {
  return -mean * std::log1p(-uniform01(g));
}

}  // namespace uwbseq
