#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mldd::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic stream seed derived from a base seed and a tag string.
inline std::uint64_t mix(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ h);
}

inline std::uint64_t mix(std::uint64_t seed, std::string_view tag, std::uint64_t n) {
  return splitmix64(mix(seed, tag) ^ splitmix64(n));
}

// Uniform double in [0, 1) from the top 53 bits; avoids the
// implementation-defined behaviour of std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

// Uniform integer in [0, n); n must be positive.
inline std::uint64_t below(std::mt19937_64& gen, std::uint64_t n) {
  return gen() % n;
}

}  // namespace mldd::rng
