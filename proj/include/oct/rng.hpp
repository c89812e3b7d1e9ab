#pragma once

#include <cmath>
#include <cstdint>

#include "oct/errors.hpp"

namespace oct {

// Deterministic PRNG with a fixed cross-platform algorithm (splitmix64).
// The standard <random> distributions are implementation-defined, which
// would break byte-identical dataset generation across toolchains, so the
// few distributions we need are spelled out here. State is a single 64-bit
// word and serializes trivially.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0,1]; safe as a log() argument.
  double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    contract(n > 0, "uniform_int: n must be positive");
    return int(next_u64() % uint64_t(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; draws a fresh pair every call so the
  // state stays a single word.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape k, scale theta) by Marsaglia-Tsang, boosted for k < 1.
  double gamma(double k, double theta) {
    contract(k > 0 && theta > 0, "gamma: shape and scale must be positive");
    if (k < 1.0) {
      double u = uniform_pos();
      return gamma(k + 1.0, theta) * std::pow(u, 1.0 / k);
    }
    double d = k - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0) continue;
      v = v * v * v;
      double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
        return d * v * theta;
    }
  }

  // Derive an independent stream, e.g. one per sample.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x6a09e667f3bcc909ull + stream * 0xd1342543de82ef95ull));
    r.next_u64();
    return r;
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

}  // namespace oct
