#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace collagan {

/// Explicitly seeded random source. Every stochastic operation takes one of
/// these by reference so results depend only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Derives an independent stream from a base seed and a path of indices
  /// (epoch, step, sample, ...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (auto p : path) {
      words.push_back(static_cast<std::uint32_t>(p));
      words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Inclusive on both ends.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::uint64_t next() { return engine_(); }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace collagan
