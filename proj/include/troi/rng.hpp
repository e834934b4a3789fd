#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace troi {

// Deterministic splitmix64 stream keyed by (seed, tag). Every consumer of
// randomness owns an independent stream, so adding a draw in one place never
// shifts the sequence seen by another. State is a single u64 and therefore
// trivially serializable.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view tag) : state_(key(seed, tag)) {}

  static Rng from_state(std::uint64_t s) {
    Rng r;
    r.state_ = s;
    return r;
  }

  std::uint64_t state() const { return state_; }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; one value per call, no cached spare.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled with the U^(1/alpha) boost.
  double gamma(double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("Rng::gamma: alpha must be positive");
    if (alpha < 1.0) {
      double u = 1.0 - uniform01();  // (0, 1], keeps pow finite
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 1.0 - uniform01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // Beta(a, b) as Ga/(Ga+Gb). Result is always inside [0, 1].
  double beta(double a, double b) {
    double ga = gamma(a);
    double gb = gamma(b);
    double s = ga + gb;
    if (s <= 0.0) return 0.5;  // both underflowed; vanishing probability
    return ga / s;
  }

  // Seeded Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  Rng() = default;

  static std::uint64_t key(std::uint64_t seed, std::string_view tag) {
    // FNV-1a over the tag, then two splitmix rounds to decorrelate nearby seeds.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    std::uint64_t s = seed ^ h;
    Rng r;
    r.state_ = s;
    r.next_u64();
    return r.state_ ^ r.next_u64();
  }

  std::uint64_t state_ = 0;
};

// Derives a child seed for an indexed substream (per-subject generators etc.).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  Rng r(seed ^ (0x9E3779B97F4A7C15ull * (index + 1)), tag);
  return r.next_u64();
}

}  // namespace troi
