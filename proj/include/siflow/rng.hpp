#pragma once

#include <cstdint>

namespace siflow {

// Counter-based standard normals: the value at (seed, stream, index) is a
// pure function of the triple, so results do not depend on evaluation order.
class CounterNormal {
 public:
  explicit CounterNormal(std::uint64_t seed) : seed_(seed) {}

  double normal(std::uint64_t stream, std::uint64_t index) const;
  double uniform(std::uint64_t stream, std::uint64_t index) const;  // in (0,1)

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// Sequential view of a CounterNormal stream.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream) : gen_(seed), stream_(stream) {}
  double next_normal() { return gen_.normal(stream_, counter_++); }
  double next_uniform() { return gen_.uniform(stream_, counter_++); }

 private:
  CounterNormal gen_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace siflow
