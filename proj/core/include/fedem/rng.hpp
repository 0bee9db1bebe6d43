#pragma once

#include <cstdint>

namespace fedem {

/// Small counter-based random stream (splitmix64 core).
///
/// Streams are cheap to construct, so every (worker, round, purpose) tuple
/// gets its own stream derived from the master seed. Results are then
/// independent of worker execution order and of the thread count.
/// All distributions are generated from raw bits in-house so that traces are
/// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double uniform();

  /// Uniform integer in [0, n). Requires n >= 1.
  int uniform_int(int n);

  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal();

 private:
  std::uint64_t state_;
};

/// Collision-resistant combination of a seed with stream coordinates.
std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);

/// Why a stream is being drawn from; part of the stream key.
enum class StreamPurpose : std::uint64_t {
  Participation = 1,
  Batch = 2,
  Quantize = 3,
  Data = 4,
  Init = 5,
  Probe = 6,
};

/// Stream for (seed, round, worker, purpose).
Rng stream_for(std::uint64_t seed, std::uint64_t round, std::uint64_t worker,
               StreamPurpose purpose);

}  // namespace fedem
