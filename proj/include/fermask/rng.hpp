#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace fermask {

std::string sha256_hex(std::string_view bytes);

// Counter-based stream: value i is splitmix64(key + i * golden). The key is
// derived from (seed, draw_key), so every draw_key owns an independent stream
// regardless of the order streams are consumed in.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view draw_key);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits.
  double next_unit();
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli_half() { return (next_u64() >> 63) != 0; }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Resolve a seed: explicit value, else FERMASK_SEED, else nullopt-equivalent false.
bool seed_from_env(std::uint64_t* seed);

}  // namespace fermask
