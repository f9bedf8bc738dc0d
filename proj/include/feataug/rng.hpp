#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace feataug {

/// Counter-based random stream addressed by (seed, derivation path).
///
/// The stream key is a hash of the seed and every label along the path;
/// draws are a SplitMix64 sequence over that key. Deriving a child never
/// touches the parent's counter, so the values a consumer sees depend only
/// on where it sits in the derivation tree, not on iteration order or
/// thread schedule.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::vector<std::uint64_t> path = {});

  RngStream derive(std::uint64_t label) const;
  RngStream derive(std::initializer_list<std::uint64_t> labels) const;

  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  /// Standard normal via Box-Muller; pairs are cached.
  double normal();

 private:
  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace feataug
