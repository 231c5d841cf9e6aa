#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sslab {

// Seeded generator. The conversions to real values are written out here so
// results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal();

  // Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Independent seed for a named sub-stream of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace sslab
