#include "siflow/rng.hpp"

#include <cmath>
#include <numbers>

namespace siflow {

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

double to_open_unit(std::uint64_t bits) {
  // 53 random bits, shifted off zero
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t key(std::uint64_t seed, std::uint64_t stream, std::uint64_t index, std::uint64_t lane) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ stream);
  h = mix64(h ^ index);
  return mix64(h ^ lane);
}

}  // namespace

double CounterNormal::uniform(std::uint64_t stream, std::uint64_t index) const {
  return to_open_unit(key(seed_, stream, index, 0x5bd1e995ULL));
}

double CounterNormal::normal(std::uint64_t stream, std::uint64_t index) const {
  const double u1 = to_open_unit(key(seed_, stream, index, 1));
  const double u2 = to_open_unit(key(seed_, stream, index, 2));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace siflow
