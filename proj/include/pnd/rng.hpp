#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace pnd {

// splitmix64 step; used for seeding and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from a base seed and a label. All
// randomness in the project fans out from one user seed through this function.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// xoshiro256** 1.0 (Blackman & Vigna), seeded by four splitmix64 outputs.
// Distribution helpers are implemented here rather than through <random>
// so that streams are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  // Uniform in the open interval (0, 1), 53-bit resolution.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform float strictly inside (-scale, scale); 24-bit resolution.
  float symmetric_float(float scale);
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (second value discarded).
  double normal();

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace pnd
