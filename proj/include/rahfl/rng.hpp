#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace rahfl {

namespace detail {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace detail

/// Counter-based random stream. A stream is identified by a key; `split`
/// derives a child key without consuming state, so sibling streams stay
/// independent no matter how much each one is used.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(detail::mix64(key ^ detail::kGolden)) {}

  Rng split(std::uint64_t tag) const {
    return Rng(detail::mix64(key_ + detail::mix64(tag + 0x632BE59BD9B4E019ull)));
  }
  Rng split(std::string_view name) const { return split(detail::fnv1a(name)); }

  std::uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [lo, hi], inclusive.
  long uniform_int(long lo, long hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(next_u64() % span);
  }

  bool bernoulli(double p) { return next_double() < p; }

  /// Standard normal via Box-Muller (two fresh uniforms per draw).
  double normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled by boosting.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("Rng::gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = next_double();
      return gamma(shape + 1.0) * std::pow(u <= 0.0 ? 1e-300 : u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = next_double();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  std::vector<double> dirichlet(double alpha, std::size_t n) {
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& v : w) {
      v = gamma(alpha);
      total += v;
    }
    for (auto& v : w) v /= total;
    return w;
  }

  /// Poisson; exact product method for small lambda, normal approximation
  /// for large lambda (adequate for shot-noise synthesis).
  long poisson(double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("Rng::poisson: negative lambda");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) {
      const double limit = std::exp(-lambda);
      long k = 0;
      double prod = next_double();
      while (prod > limit) {
        ++k;
        prod *= next_double();
      }
      return k;
    }
    const double v = std::round(normal(lambda, std::sqrt(lambda)));
    return v < 0.0 ? 0 : static_cast<long>(v);
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<long>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace rahfl
