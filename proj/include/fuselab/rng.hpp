// Deterministic random streams. SplitMix64 state transition plus explicit
// Box-Muller for normals, so a seed reproduces the same sequence on any
// platform with IEEE doubles. Streams can be split by tag so independent
// consumers (init, shuffling, masking, ...) never share draws.
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fuselab {

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();

  // Uniform integer in [0, n), n >= 1.
  std::uint64_t uniform_int(std::uint64_t n);

  // In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int>& v);

  // Derive an independent stream. Same (seed, tag) always gives the same
  // substream; different tags give unrelated ones.
  RandomStream split(std::string_view tag) const;
  RandomStream split(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a 64-bit hash; also used for checkpoint checksums and config hashes.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace fuselab
