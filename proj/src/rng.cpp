#include "leafdiag/rng.hpp"

#include <cmath>
#include <numbers>

#include "leafdiag/error.hpp"

namespace leafdiag::rng {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::string_view> keys) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const auto feed = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001B3ULL;
  };
  for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>(seed >> (8 * i)));
  for (const auto key : keys) {
    for (const char c : key) feed(static_cast<unsigned char>(c));
    feed(0xFF);  // separator: ("ab","c") != ("a","bc")
  }
  return splitmix64(h);
}

double Stream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Stream::below(std::uint64_t bound) {
  if (bound == 0) throw InvariantError("Stream::below requires a positive bound");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Stream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Stream::poisson(double mean) {
  if (!(mean >= 0.0) || mean > 500.0) throw InvariantError("poisson mean must be in [0, 500]");
  if (mean == 0.0) return 0;
  // Product method in log space so large means do not underflow exp(-mean).
  double log_prod = 0.0;
  std::uint64_t k = 0;
  while (true) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    log_prod += std::log(u);
    if (log_prod < -mean) return k;
    ++k;
  }
}

}  // namespace leafdiag::rng
