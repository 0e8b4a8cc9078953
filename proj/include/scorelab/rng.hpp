#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace scorelab {

// Seeded RNG used everywhere randomness is needed. One instance per model /
// training run so independent runs never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    return n == 0 ? 0 : gen_() % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  // Zero-mean normal, resampled until within clip standard deviations.
  double truncated_normal(double stddev, double clip = 2.0) {
    for (;;) {
      double z = std::normal_distribution<double>(0.0, 1.0)(gen_);
      if (z >= -clip && z <= clip) return z * stddev;
    }
  }

  // Fisher-Yates with our own bounded draw.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace scorelab
