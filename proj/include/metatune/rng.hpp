#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace metatune {

// splitmix64 finalizer; used to derive independent per-row seed streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { theta = 1, prbs = 2, noise = 3 };

/// Counter-based seed for (master seed, row index, stream); independent of
/// generation order, so rows may be produced in parallel.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t row, Stream s) {
  return mix64(mix64(master) ^ mix64(row * 0x9e3779b97f4a7c15ULL + 1)
               ^ mix64(static_cast<std::uint64_t>(s) << 32));
}

/// mt19937_64 wrapper with fixed output mappings so draws are reproducible
/// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() {
    // 53-bit mantissa draw in [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace metatune
