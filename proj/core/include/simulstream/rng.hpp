#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace simulstream {

// Deterministic PRNG with named substreams. All randomness in the project
// flows from one root seed; substreams are derived by hashing a label and an
// index, so parallel consumers (per-sample generation, per-step chunk
// sampling) stay reproducible regardless of evaluation order.
//
// Distributions are implemented by hand on top of the raw 64-bit stream:
// std::uniform_int_distribution et al. are not pinned by the standard, and we
// want byte-stable outputs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Avoid the all-zero fixpoint and decorrelate trivially related seeds.
    next_u64();
    next_u64();
  }

  static uint64_t hash_label(std::string_view label) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  // Substream for (label, index) under a root seed.
  static Rng substream(uint64_t root, std::string_view label, uint64_t index = 0) {
    uint64_t s = root;
    s = splitmix(s ^ hash_label(label));
    s = splitmix(s ^ index);
    return Rng(s);
  }

  uint64_t next_u64() {
    state_ = splitmix_advance(state_);
    return splitmix_output(state_);
  }

  // Uniform over [0, n) by modulo; bias is negligible for our n << 2^64.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  int next_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (one value per call; pairs not cached so
  // the stream position is easy to reason about).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename T>
  void shuffle(T* data, size_t n) {
    if (n < 2) return;
    for (size_t i = n - 1; i > 0; --i) {
      size_t j = next_below(i + 1);
      std::swap(data[i], data[j]);
    }
  }

 private:
  static uint64_t splitmix_advance(uint64_t x) { return x + 0x9e3779b97f4a7c15ull; }

  static uint64_t splitmix_output(uint64_t x) {
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static uint64_t splitmix(uint64_t x) { return splitmix_output(splitmix_advance(x)); }

  uint64_t state_;
};

}  // namespace simulstream
