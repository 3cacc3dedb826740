#ifndef SHAKEDROP_RNG_HPP_
#define SHAKEDROP_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace shakedrop {

namespace detail {

// SplitMix64 finalizer; also used to mix seeds when deriving child streams.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic, splittable pseudo-random stream (SplitMix64 core).
//
// A stream remembers the seed it was created with; child() derives an
// independent stream from that base seed and a name/index pair, so the
// derivation does not depend on how many draws were consumed. Copies are
// value copies: the copy and the original advance independently.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : base_(seed), state_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  RngStream child(std::string_view name, std::uint64_t index = 0) const {
    std::uint64_t mixed = detail::mix64(base_ ^ detail::fnv1a64(name));
    mixed = detail::mix64(mixed ^ detail::mix64(index ^ 0x7f4a7c15ULL));
    return RngStream(mixed);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  bool next_bernoulli(double p) { return next_uniform() < p; }

  // Unbiased-enough integer in [0, n) for n << 2^64 (fixed-point multiply).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double next_normal() {
    double u1 = 1.0 - next_uniform();  // (0, 1]
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled by boosting.
  double next_gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("rng: gamma shape must be positive");
    if (shape < 1.0) {
      double u = next_uniform();
      while (u <= 0.0) u = next_uniform();
      return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = next_normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = next_uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double next_beta(double a, double b) {
    double x = next_gamma(a);
    double y = next_gamma(b);
    return x / (x + y);
  }

  // Internal state, exposed so tests can assert that a code path drew nothing.
  std::uint64_t state() const { return state_; }
  std::uint64_t base_seed() const { return base_; }

  friend bool operator==(const RngStream& a, const RngStream& b) {
    return a.base_ == b.base_ && a.state_ == b.state_;
  }

 private:
  std::uint64_t base_;
  std::uint64_t state_;
};

}  // namespace shakedrop

#endif  // SHAKEDROP_RNG_HPP_
