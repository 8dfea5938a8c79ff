#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace leafdiag::rng {

/// Identifies the generator + distribution algorithms below. Bump on any
/// change that alters drawn values, so recorded runs stay attributable.
inline constexpr std::string_view kGeneratorId = "mt19937_64+ld-dist/v1";

/// Combines a base seed with string keys into an independent stream seed
/// (FNV-1a over the keys, splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::string_view> keys);

/// Seeded stream. std::mt19937_64 output is fixed by the standard; the
/// distributions are implemented here because the std ones are not portable.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound), bound > 0; unbiased (rejection).
  std::uint64_t below(std::uint64_t bound);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (both variates used).
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }
  /// Poisson via Knuth's product method; mean must be <= 500.
  std::uint64_t poisson(double mean);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace leafdiag::rng
