#pragma once

#include <cstdint>
#include <string_view>

namespace steerlab::numerics {

// Counter-based generator: draw n of stream (seed, stream_id) is a pure
// function of (seed, stream_id, n). Identical identifiers reproduce the same
// sequence on every platform; independent streams are obtained by deriving
// new stream ids rather than by sharing state.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  // Standard normal via Box-Muller (one draw per call, two uniforms consumed).
  double normal() noexcept;
  // Uniform integer in [0, n) without modulo bias. n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  // New generator sharing the seed with a stream id mixed from this stream and
  // the given child id. Does not advance this generator.
  SeededRng derive(std::uint64_t child) const noexcept;
  SeededRng derive(std::string_view purpose, std::uint64_t child = 0) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
// FNV-1a, used to turn purpose names into stream ids.
std::uint64_t stream_id_of(std::string_view purpose) noexcept;

}  // namespace steerlab::numerics
