#include "steerlab/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace steerlab::numerics {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_id_of(std::string_view purpose) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t SeededRng::next_u64() noexcept {
  // Two rounds of mixing over (seed, stream, counter) keep adjacent counters
  // and adjacent streams decorrelated.
  const std::uint64_t key = splitmix64(seed_ ^ splitmix64(stream_ + 0x632BE59BD9B4E019ULL));
  return splitmix64(key + splitmix64(counter_++));
}

double SeededRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) noexcept {
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

SeededRng SeededRng::derive(std::uint64_t child) const noexcept {
  return SeededRng(seed_, splitmix64(stream_ ^ splitmix64(child + 0xA24BAED4963EE407ULL)));
}

SeededRng SeededRng::derive(std::string_view purpose, std::uint64_t child) const noexcept {
  return derive(stream_id_of(purpose)).derive(child);
}

}  // namespace steerlab::numerics
