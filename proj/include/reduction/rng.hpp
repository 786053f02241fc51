#pragma once

#include <cstdint>
#include <random>

namespace reduction {

// Deterministic per-stream random source. Streams for distinct (seed, index)
// pairs are decorrelated through SplitMix64 so that path i of an ensemble
// draws the same numbers no matter which thread runs it.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(mix(seed)), seed_(seed) {}

  static RandomStream for_path(std::uint64_t base_seed, std::uint64_t index) {
    return RandomStream(mix(base_seed ^ mix(index + 0x632be59bd9b4e019ULL)));
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t seed() const noexcept { return seed_; }

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::uint64_t seed_;
};

}  // namespace reduction
