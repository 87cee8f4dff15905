#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace fedgs {

// Stream tags used as the first key component when deriving sub-streams, so
// that e.g. the selection stream of (round 3, group 1) can never coincide
// with the feature stream of (device 3, batch 1).
enum class StreamTag : std::uint64_t {
  ModelInit = 0x1001,
  Selection = 0x1002,
  DeviceDistribution = 0x1003,
  BatchLabels = 0x1004,
  BatchFeatures = 0x1005,
  TestSet = 0x1006,
  ClassMeans = 0x1007,
  Sampler = 0x1008,
  Fuzz = 0x1009,
};

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator.
///
/// Streams are keyed: `Rng::derive(seed, tag, {a, b, c})` hashes the full key
/// into an independent starting state, so parallel workers draw from streams
/// that depend only on their logical coordinates, never on scheduling.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  static Rng derive(std::uint64_t seed, StreamTag tag,
                    std::initializer_list<std::uint64_t> coords = {}) noexcept {
    std::uint64_t h = splitmix64_mix(seed ^ 0x6A09E667F3BCC909ULL);
    h = splitmix64_mix(h ^ static_cast<std::uint64_t>(tag));
    for (std::uint64_t c : coords) h = splitmix64_mix(h + 0x9E3779B97F4A7C15ULL * (c + 1));
    return Rng(h);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
  }

  /// Uniform integer in [0, bound), unbiased. bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double normal();
  double gamma(double shape);

 private:
  std::uint64_t state_;
};

/// Uniformly random `count`-subset of {0..n-1} as a sorted index list
/// (partial Fisher-Yates).
std::vector<std::size_t> sample_subset(Rng& rng, std::size_t n,
                                       std::size_t count);

/// Dirichlet draw with the given concentration vector.
std::vector<double> sample_dirichlet(Rng& rng, const std::vector<double>& alpha);

/// Categorical draw from an (unnormalized non-negative) weight vector.
std::size_t sample_categorical(Rng& rng, const std::vector<double>& weights);

}  // namespace fedgs
