#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cfinet {

// Deterministic RNG. All stochastic behaviour in the library goes through
// this wrapper so runs are reproducible bit-for-bit under a fixed seed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  // Derive an independent stream from (seed, id) via splitmix64 hashing.
  static Rng derive(uint64_t seed, uint64_t id) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return Rng(z);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  // Uniform integer in [lo, hi] inclusive.
  int64_t randint(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(eng_);
  }
  uint64_t next() { return eng_(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(randint(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n) in selection order.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (int i = 0; i < k; ++i) {
      int j = static_cast<int>(randint(i, n - 1));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cfinet
