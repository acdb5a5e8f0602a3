#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace depthlab::numgrid {

// Counter-based generator: each value is a SplitMix64 finalisation of
// (key + counter). Streams derived with split() are independent of how many
// draws the parent has made, so stages never perturb each other's draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  Rng split(std::uint64_t stream) const;
  Rng split(std::string_view tag) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }
  double normal();

  std::uint64_t key() const { return key_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fisher-Yates permutation of 0..n-1.
std::vector<int> permutation(int n, Rng& rng);

// FNV-1a over raw bytes; stable across platforms.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace depthlab::numgrid
