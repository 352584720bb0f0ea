#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace spar::rng {

using Engine = std::mt19937_64;

// splitmix64 mixing step.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based stream derivation: stream i of a master seed is the same no
// matter how many sibling streams exist or in which order they are created,
// so parallel tasks can be seeded independently.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1) ^ (b >> 63);
}

inline Engine make_engine(std::uint64_t master, std::uint64_t stream = 0) {
  return Engine(stream_seed(master, stream));
}

// The std:: distributions are implementation-defined, so seeded output would
// change across standard libraries. The generators below are fixed.

// uniform on [0,1) with 53 random mantissa bits
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

// unbiased integer in [0, n) by rejection
inline std::uint64_t uniform_below(Engine& eng, std::uint64_t n) {
  assert(n > 0);
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = eng();
    if (r >= threshold) return r % n;
  }
}

inline int uniform_int(Engine& eng, int n) {
  return static_cast<int>(uniform_below(eng, static_cast<std::uint64_t>(n)));
}

// standard normal via Box-Muller (one value per u-pair, no cached state)
inline double normal(Engine& eng) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1;
  do {
    u1 = uniform01(eng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double normal(Engine& eng, double mean, double sd) {
  return mean + sd * normal(eng);
}

// Poisson count; Knuth's product method applied to chunks of the mean so the
// exp(-mu) factor never underflows.
inline long long poisson(Engine& eng, double mu) {
  assert(mu >= 0.0);
  long long total = 0;
  while (mu > 0.0) {
    const double chunk = std::min(mu, 200.0);
    const double limit = std::exp(-chunk);
    long long count = -1;
    double prod = 1.0;
    do {
      prod *= uniform01(eng);
      ++count;
    } while (prod > limit);
    total += count;
    mu -= chunk;
  }
  return total;
}

// Fisher-Yates
template <typename T>
void shuffle(Engine& eng, std::vector<T>& values) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_below(eng, i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace spar::rng
