#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace genrec {

// All randomness in the project flows through mt19937_64 seeded from a single
// root seed, with per-component streams derived by name. Distribution sampling
// is hand-rolled (the std:: distributions are implementation-defined), so a
// fixed seed reproduces byte-identical artifacts everywhere.

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Derives an independent seed stream for a named component.
inline uint64_t derive_seed(uint64_t root, std::string_view component) {
  return splitmix64(root ^ fnv1a(component));
}

inline Rng make_rng(uint64_t root, std::string_view component) {
  return Rng(derive_seed(root, component));
}

// Uniform double in [0, 1).
inline double uniform_double(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline int64_t uniform_int(Rng& rng, int64_t n) {
  return static_cast<int64_t>(uniform_double(rng) * static_cast<double>(n));
}

// Standard normal via Marsaglia polar; one value per call, cached pair dropped
// to keep the stream position easy to reason about.
inline double normal(Rng& rng) {
  for (;;) {
    double u = 2.0 * uniform_double(rng) - 1.0;
    double v = 2.0 * uniform_double(rng) - 1.0;
    double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

}  // namespace genrec
