#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace revcurl::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed, a purpose tag and an
/// index. Different tags or indices give uncorrelated streams, so rollouts,
/// shuffles and data generation never share randomness.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::uint64_t state = master;
  std::uint64_t out = splitmix64(state);
  state ^= h;
  out ^= splitmix64(state);
  state ^= index + 0x9e3779b97f4a7c15ull;
  out ^= splitmix64(state);
  return out;
}

/// Deterministic random stream. Distributions are implemented by hand on top
/// of mt19937_64 so results do not depend on the standard library's
/// distribution internals.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi], inclusive, unbiased.
  long long uniform_int(long long lo, long long hi) {
    assert(lo <= hi);
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) {  // full 64-bit range
      return static_cast<long long>(engine_());
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<long long>(r % range);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller without the cached spare: consumption order stays fixed.
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * radius * std::cos(6.283185307179586 * u2);
  }

  /// Samples an index from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) {
      throw std::invalid_argument("categorical: weights must have positive sum");
    }
    const double r = uniform01() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      cum += weights[i];
      if (r < cum) return i;
    }
    return weights.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<long long>(i)));
      std::swap(values[i], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace revcurl::rng
