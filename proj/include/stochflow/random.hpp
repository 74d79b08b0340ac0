#pragma once

#include <cstdint>
#include <random>

namespace stochflow {

/// SplitMix64 finalizer, used to decorrelate (seed, stream) pairs.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Identifies an independent random sequence. The same (master_seed,
/// stream_id) always yields the same draws, whichever thread consumes it.
struct RngStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  std::mt19937_64 engine() const {
    return std::mt19937_64(mix64(mix64(master_seed) ^ mix64(stream_id + 0x632be59bd9b4e019ULL)));
  }

  /// Child stream keyed by an extra index (e.g. flow step, then grid node).
  RngStream child(std::uint64_t index) const {
    return {mix64(master_seed ^ mix64(stream_id)), index};
  }
};

}  // namespace stochflow
