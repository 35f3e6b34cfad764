#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace steersig {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Seed for sub-stream `stream` of `master`. Distinct streams give
// statistically unrelated generators.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

// Deterministic generator with platform-independent derived draws.
// std::*_distribution is avoided on purpose: its output is implementation
// defined, while every artifact here must be reproducible bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller (one value per call).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace steersig
