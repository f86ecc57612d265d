#pragma once

#include <cmath>
#include <cstdint>

namespace stabkit {

// Counter-based deterministic RNG. Every run derives all of its streams from
// one master seed via split(), so results do not depend on call interleaving,
// thread count, or the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  // Derives an independent stream keyed by `stream`. Splitting the same
  // parent with the same key always yields the same child.
  Rng split(std::uint64_t stream) const {
    return from_state(mix(state_ + kGolden * (stream + 1)));
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // i in [0, n), n > 0. Rejection-free modulo bias is fine at our scales
  // (n is tiny compared to 2^64), but use Lemire reduction anyway.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller. One value per call; deterministic.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

 private:
  static Rng from_state(std::uint64_t raw) {
    Rng r(0);
    r.state_ = raw;
    return r;
  }

  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;
  static constexpr double kPi = 3.14159265358979323846;

  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace stabkit
