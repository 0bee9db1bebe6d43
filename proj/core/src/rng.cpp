#include "fedem/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedem {

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

}  // namespace

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  return mix64(state_);
}

double Rng::uniform() {
  // 53 top bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
  // rejection sampling keeps the draw unbiased
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t bound = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x = next_u64();
  while (x >= bound) x = next_u64();
  return static_cast<int>(x % un);
}

double Rng::normal() {
  double u1 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return mix64(h);
}

Rng stream_for(std::uint64_t seed, std::uint64_t round, std::uint64_t worker,
               StreamPurpose purpose) {
  std::uint64_t h = hash_combine(seed, round);
  h = hash_combine(h, worker);
  h = hash_combine(h, static_cast<std::uint64_t>(purpose));
  return Rng(h);
}

}  // namespace fedem
