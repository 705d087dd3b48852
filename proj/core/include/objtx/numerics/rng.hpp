#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace objtx::num {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives independent named sub-streams from one master seed, so adding a
/// consumer to one stream never shifts the draws seen by another.
class SeedSequence {
 public:
  explicit SeedSequence(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t derive(std::string_view name, std::uint64_t index = 0) const noexcept {
    return mix64(mix64(seed_ ^ fnv1a64(name)) + index);
  }

  Rng stream(std::string_view name, std::uint64_t index = 0) const {
    return Rng(derive(name, index));
  }

 private:
  std::uint64_t seed_;
};

/// Uniform real in [0, 1) built from the raw 64-bit draw; unlike
/// std::uniform_real_distribution the mapping is fixed across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Normal(0, std) resampled until it falls within two standard deviations.
inline double truncated_normal(Rng& rng, double std) {
  for (;;) {
    double x = normal(rng);
    if (x >= -2.0 && x <= 2.0) return x * std;
  }
}

}  // namespace objtx::num
