#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace minvar {

/// Deterministic pseudo-random stream with counter-based splitting.
///
/// Every random draw in the library flows from a single 64-bit seed. A
/// stream can derive independent child streams via split(), keyed by a
/// label or an index, so subsystems (sample drawing, weight init,
/// bootstrap replications, ...) consume disjoint sequences regardless of
/// call order. All transforms (uniform, normal, gamma, student-t) are
/// implemented here so results do not depend on the standard library's
/// distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t base_seed() const { return base_seed_; }

  /// Derive an independent child stream from a label.
  Rng split(std::string_view tag) const {
    return Rng(mix(base_seed_, fnv1a(tag)));
  }

  /// Derive an independent child stream from an index (e.g. replication id).
  Rng split(std::uint64_t index) const {
    return Rng(mix(base_seed_, index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  }

  // xoshiro256++ core.
  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  long long uniform_int(long long lo, long long hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
    // Rejection sampling avoids modulo bias.
    const std::uint64_t limit = span * (UINT64_MAX / span);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit && limit != 0);
    return lo + static_cast<long long>(x % span);
  }

  /// Standard normal via Box-Muller (no state caching, fully deterministic).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Gamma(shape, scale=1) by Marsaglia-Tsang; shape boost for k < 1.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("Rng::gamma: shape must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  /// Student-t with nu degrees of freedom (unit scale, not unit variance).
  double student_t(double nu) {
    if (nu <= 0.0) throw std::invalid_argument("Rng::student_t: nu must be > 0");
    return normal() / std::sqrt(chi_squared(nu) / nu);
  }

  /// Student-t rescaled to unit variance; requires nu > 2.
  double student_t_unit_variance(double nu) {
    if (nu <= 2.0) throw std::invalid_argument("Rng::student_t_unit_variance: nu must be > 2");
    return student_t(nu) * std::sqrt((nu - 2.0) / nu);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    std::uint64_t r = splitmix64(s);
    return r ^ splitmix64(s);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::uint64_t base_seed_;
  std::uint64_t state_[4];
};

}  // namespace minvar
