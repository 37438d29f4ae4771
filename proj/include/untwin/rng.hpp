#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace untwin {

// Purpose tags keep substreams for unrelated draws disjoint even when their
// numeric ids coincide.
enum class StreamKind : std::uint64_t {
  kModelInit = 1,
  kBatch = 2,
  kTraceIdio = 3,
  kTraceShared = 4,
  kPerturb = 5,
  kLipschitzProbe = 6,
  kPermutation = 7,
  kGeneric = 8,
};

// splitmix64 finalizer; full-avalanche 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based deterministic substream. A stream is identified by
// (seed, kind, a, b); every draw is a pure function of that identity and the
// draw index, so neither creation order nor thread interleaving changes any
// value. Excluding a client from a replay therefore leaves every other
// client's sampling untouched.
class Substream {
 public:
  Substream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0,
            std::uint64_t b = 0)
      : key_(derive_key(seed, kind, a, b)) {}

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    return mix64(key_ ^ mix64(counter_++ ^ 0x632be59bd9b4e019ULL));
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform integer in [0, n); multiply-shift with rejection.
  std::uint64_t next_below(std::uint64_t n) {
    auto widen = [](std::uint64_t x, std::uint64_t y) {
      return static_cast<unsigned __int128>(x) * y;
    };
    unsigned __int128 m = widen(next_u64(), n);
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        m = widen(next_u64(), n);
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via explicit Box-Muller. std::normal_distribution is
  // implementation-defined, so the transform is spelled out to keep the
  // stream contract independent of the standard library.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log stays finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static constexpr std::uint64_t derive_key(std::uint64_t seed,
                                            StreamKind kind, std::uint64_t a,
                                            std::uint64_t b) {
    std::uint64_t k = mix64(seed);
    k = mix64(k ^ static_cast<std::uint64_t>(kind));
    k = mix64(k ^ a);
    k = mix64(k ^ b);
    return k;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace untwin
