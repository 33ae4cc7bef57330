#pragma once

#include <cstdint>
#include <vector>

namespace dan {

// Deterministic pseudo-random stream (splitmix64 core, Box-Muller normals).
// The sequence is fully pinned by the seed and independent of the standard
// library, so seeded runs reproduce bit-for-bit across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal; pairs are generated via Box-Muller and cached.
  double normal();
  double normal(double mean, double stddev);

  // Uniform integer in [0, n), n >= 1. Rejection sampling, bias-free.
  std::int64_t below(std::int64_t n);

  bool bernoulli(double p);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(below(i + 1))]);
    }
  }

  // Mixes a master seed with a stream tag so sub-generators are decorrelated.
  static std::uint64_t derive(std::uint64_t master, std::uint64_t stream);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dan
