#pragma once

#include <cmath>
#include <cstdint>

namespace dits {

/// Deterministic random generator (splitmix64 core) with explicit uniform and
/// normal transforms. Avoids std:: distributions so that seeded runs are
/// bit-identical regardless of standard library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed + 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; no cached spare, so draw order is
  /// exactly one uniform pair per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  /// Independent child stream; used for per-member ensemble seeds.
  Rng fork(std::uint64_t stream) const {
    Rng child(state_ ^ (0xd1342543de82ef95ull * (stream + 1)));
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
};

}  // namespace dits
