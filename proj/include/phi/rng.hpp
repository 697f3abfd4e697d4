#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace phi {

// Counter-based generator: every stream is derived from (master seed, label),
// so adding a new consumer never shifts the draws of an existing one.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed ^ 0x9e3779b97f4a7c15ULL) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  double normal() {
    // Box-Muller; one draw discarded to keep the stream stateless.
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

inline uint64_t hash_label(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent child stream for a named purpose.
inline Rng derive_rng(uint64_t master_seed, std::string_view label, uint64_t index = 0) {
  uint64_t s = Rng::mix(master_seed ^ hash_label(label));
  return Rng(Rng::mix(s ^ Rng::mix(index)));
}

}  // namespace phi
