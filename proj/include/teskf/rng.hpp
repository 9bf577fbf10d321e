#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace teskf {

// Counter-based generator: output i of a stream is mix64(key + i * GAMMA)
// (splitmix64 finalizer), so draws depend only on (seed, stream, index) and
// never on evaluation order elsewhere. Streams are derived by hashing a
// label into the master seed.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (const char c : label) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  // Derived stream: same master seed + different labels -> independent keys.
  Rng stream(std::string_view label) const {
    return Rng(mix64(key_ ^ hash_label(label)));
  }
  Rng stream(std::uint64_t index) const { return Rng(mix64(key_ ^ mix64(index))); }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

  // Uniform in (0, 1]; never returns 0 so log() below is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Box-Muller; consumes two uniforms per pair, caches the second value.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace teskf
