#pragma once

#include <cstdint>
#include <random>

namespace fedaia {

using Rng = std::mt19937_64;

// Purposes of derived random streams; a stream is identified by
// (master seed, purpose, id) so that adding one consumer never perturbs another.
enum class StreamPurpose : std::uint64_t {
  kClientBatches = 1,
  kServerSampling = 2,
  kDpNoise = 3,
  kModelInit = 4,
  kData = 5,
  kAttack = 6,
  kSelection = 7,
};

inline Rng derive_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t id = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(id >> 32)};
  return Rng(seq);
}

}  // namespace fedaia
