#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace entangle {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable purpose tags for stream derivation.
constexpr std::uint64_t tag(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based seed derivation: the same (master, keys...) always yields the
/// same child seed, independent of how many other streams were drawn.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = splitmix64(master);
  for (auto k : keys) s = splitmix64(s ^ splitmix64(k));
  return s;
}

inline Rng make_stream(std::uint64_t master,
                       std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(master, keys));
}

// sd == 0 returns the mean without consuming the stream.
inline double draw_normal(Rng& rng, double mean, double sd) {
  if (sd == 0.0) return mean;
  std::normal_distribution<double> dist(mean, sd);
  return dist(rng);
}

inline double draw_uniform(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace entangle
