#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "gtn/error.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

/// splitmix64 finalizer; used to derive child stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a 64-bit hash, used for string stream labels and file checksums.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/**
 * Deterministic random stream.
 *
 * The engine is std::mt19937_64, whose output sequence for a given seed is
 * fully specified by the C++ standard, so a seed reproduces the same draws
 * on every platform. Derived quantities use documented constructions:
 *
 *  - uniform(lo, hi): top 53 bits of the next 64-bit word, scaled by 2^-53,
 *    mapped affinely onto [lo, hi).
 *  - normal(mean, std): trigonometric Box-Muller on u1 in (0,1], u2 in
 *    [0,1); variates come in pairs and the spare is cached.
 *  - index(n): next 64-bit word modulo n.
 *  - shuffle: Fisher-Yates from the top of the array down.
 *
 * Streams are single-owner; never draw from one Rng on two threads.
 * split() derives an independent child stream from the parent's seed and a
 * label only, so it does not depend on how many draws the parent has made.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) {
      throw ValueError("uniform: lo must be < hi");
    }
    return lo + unit_open() * (hi - lo);
  }

  double normal(double mean, double std) {
    if (!(std > 0.0)) {
      throw ValueError("normal: std must be > 0");
    }
    return mean + std * standard_normal();
  }

  bool bernoulli(double p) {
    if (p < 0.0 || p > 1.0) throw ValueError("bernoulli: p must be in [0,1]");
    return unit_open() < p;
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw ValueError("index: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  Rng split(std::uint64_t label) const { return Rng(mix64(seed_ ^ mix64(label))); }
  Rng split(std::string_view label) const { return split(fnv1a64(label)); }

private:
  double unit_open() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double standard_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = unit_open();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Tensor filled with uniform draws in [lo, hi), in flat row-major order.
inline Tensor rand_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Tensor filled with normal draws, in flat row-major order.
inline Tensor rand_normal(Rng& rng, Shape shape, double mean, double std) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(mean, std);
  return t;
}

}  // namespace gtn
