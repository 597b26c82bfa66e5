#include "fermask/rng.hpp"

#include <openssl/sha.h>

#include <cstdlib>
#include <cstring>

#include "fermask/error.hpp"

namespace fermask {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::string_view draw_key) {
  std::string material(8, '\0');
  for (int i = 0; i < 8; ++i) material[i] = static_cast<char>((seed >> (8 * i)) & 0xFF);
  material.append(draw_key);
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(material.data()), material.size(), digest);
  key_ = 0;
  for (int i = 0; i < 8; ++i) key_ |= static_cast<std::uint64_t>(digest[i]) << (8 * i);
}

std::uint64_t CounterRng::next_u64() {
  return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++);
}

double CounterRng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double lo, double hi) {
  if (lo == hi) return lo;
  return lo + (hi - lo) * next_unit();
}

std::int64_t CounterRng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return lo + static_cast<std::int64_t>(v % span);
}

bool seed_from_env(std::uint64_t* seed) {
  const char* env = std::getenv("FERMASK_SEED");
  if (env == nullptr || *env == '\0') return false;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == nullptr || *end != '\0') throw ValidationError(std::string("FERMASK_SEED is not an integer: ") + env);
  *seed = v;
  return true;
}

}  // namespace fermask
