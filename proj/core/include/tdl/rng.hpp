#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tdl {

// Splitmix64-based generator. All randomness in the project flows from one
// u64 seed through named substreams so components can be re-seeded
// independently and results stay reproducible across platforms (no
// std::uniform_real_distribution, whose output is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derive an independent stream from this one; does not advance *this.
  Rng substream(std::string_view name) const {
    return Rng(mix(state_ ^ fnv1a(name)));
  }
  Rng substream(uint64_t salt) const { return Rng(mix(state_ ^ mix(salt))); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix_final(state_);
  }

  // Uniform in [0,1) with 53 random bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  // Box-Muller; draws two uniforms per call.
  double next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.2831853071795864769 * u2);
  }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  uint64_t state() const { return state_; }
  static Rng from_state(uint64_t s) { return Rng(s); }

 private:
  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
  static uint64_t mix_final(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static uint64_t mix(uint64_t z) { return mix_final(z + 0x9e3779b97f4a7c15ull); }

  uint64_t state_;
};

}  // namespace tdl
