#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace layerdag {

// SplitMix64 finalizer. Used both for seed derivation and as the PRNG core so
// that draws are reproducible across platforms and standard library versions.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based splittable RNG. Streams are keyed by hashing an arbitrary
// tuple of identifiers (seed, graph, layer, step, ...), so parallel workers
// get independent, deterministic streams regardless of thread count.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix64(seed)), counter_(0) {}

  static Rng derive(std::initializer_list<uint64_t> parts) {
    uint64_t h = 0x243f6a8885a308d3ULL;
    for (uint64_t p : parts) h = mix64(h ^ p);
    Rng r(0);
    r.key_ = h;
    return r;
  }

  uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Index sampled according to (not necessarily normalized) weights.
  int categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    if (total <= 0)
      throw std::invalid_argument("Rng::categorical: nonpositive total weight");
    double u = uniform() * total;
    double acc = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
  }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace layerdag
