#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace mwnmt {

/// Deterministic RNG. Wraps std::mt19937_64 (whose output sequence is fixed by
/// the standard) and derives all draws from raw 64-bit words, so streams are
/// reproducible across platforms and standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t limit = ~0ull - ~0ull % n;
    std::uint64_t u = next();
    while (u >= limit) u = next();
    return u % n;
  }

  int range(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::range: empty range");
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices from [0, population), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t k) {
    if (k > population) {
      throw std::invalid_argument("Rng::sample_without_replacement: k exceeds population");
    }
    std::vector<std::size_t> idx(population);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(population - i));
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mwnmt
