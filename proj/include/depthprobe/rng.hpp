#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "depthprobe/errors.hpp"

// Self-contained seeded RNG. Standard-library distributions are
// implementation-defined, so everything here is hand-rolled to keep
// experiment outputs byte-identical across toolchains.

namespace depthprobe {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += kGolden);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Seed-splitting scheme used for all parallel work: each tag is absorbed
// into a splitmix64 chain, so derive(s, {a, b}) is both deterministic and
// independent of how tasks are scheduled.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = seed;
  for (std::uint64_t t : tags) {
    s ^= splitmix64(t) + kGolden + (s << 6) + (s >> 2);
    splitmix64(s);
  }
  return s;
}

// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by masked rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ValueError("uniform_int: n must be positive");
    std::uint64_t mask = ~0ull;
    const std::uint64_t limit = n - 1;
    int shift = 0;
    while ((limit & (mask >> 1)) == limit && shift < 63) {
      mask >>= 1;
      ++shift;
    }
    for (;;) {
      const std::uint64_t x = next_u64() & mask;
      if (x < n) return x;
    }
  }

  // Standard normal via Box-Muller (one deviate per pair of uniforms).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Marsaglia-Tsang gamma sampler; alpha < 1 uses the boost trick.
  double gamma(double alpha) {
    if (!(alpha > 0.0)) throw ValueError("gamma: alpha must be positive");
    if (alpha < 1.0) {
      const double u = 1.0 - uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet(concentration) over k categories.
  std::vector<double> dirichlet(int k, double concentration) {
    if (k < 1) throw ValueError("dirichlet: k must be >= 1");
    std::vector<double> row(static_cast<size_t>(k));
    double total = 0.0;
    for (auto& x : row) {
      x = gamma(concentration);
      total += x;
    }
    if (total <= 0.0) {  // all-underflow fallback: uniform row
      for (auto& x : row) x = 1.0 / k;
      return row;
    }
    for (auto& x : row) x /= total;
    return row;
  }

  // k distinct indices from [0, n), ascending. Partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw ValueError("sample_without_replacement: k out of range");
    std::vector<int> pool(static_cast<size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace depthprobe
