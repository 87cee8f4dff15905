#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedgs/error.hpp"

namespace fedgs {

/// Absolute tolerance for every probability comparison in the library.
inline constexpr double kProbTolerance = 1e-9;

/// Per-class sample counts of a batch, a device or a group of devices.
class ClassCounts {
 public:
  ClassCounts() = default;
  explicit ClassCounts(std::size_t classes) : counts_(classes, 0) {}
  explicit ClassCounts(std::vector<std::int64_t> counts);

  std::size_t size() const noexcept { return counts_.size(); }
  std::int64_t operator[](std::size_t i) const { return counts_[i]; }
  std::span<const std::int64_t> values() const noexcept { return counts_; }
  std::int64_t total() const noexcept;

  void add(std::size_t label, std::int64_t amount = 1);
  ClassCounts& operator+=(const ClassCounts& other);

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;

 private:
  std::vector<std::int64_t> counts_;
};

/// Histogram of integer labels in [0, classes).
ClassCounts histogram(std::span<const int> labels, std::size_t classes);

/// A probability vector over F label classes.
class ClassDistribution {
 public:
  /// Throws InvalidDistribution unless entries are non-negative and sum to
  /// one within kProbTolerance.
  explicit ClassDistribution(std::vector<double> probs);

  static ClassDistribution uniform(std::size_t classes);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  friend bool operator==(const ClassDistribution&,
                         const ClassDistribution&) = default;

 private:
  std::vector<double> probs_;
};

struct FederationTopology {
  std::vector<std::size_t> devices_per_group;  // K^m for each group m
  std::size_t selected = 0;                    // L
  std::size_t presampled = 0;                  // L_rnd
  std::size_t classes = 0;                     // F
  std::size_t iterations_per_round = 1;        // T
  std::size_t rounds = 1;                      // R
  std::size_t batch_size = 1;                  // n
  double learning_rate = 0.01;                 // eta

  std::size_t groups() const noexcept { return devices_per_group.size(); }
  std::size_t optimized() const noexcept { return selected - presampled; }

  /// Throws InvalidConfig on any broken invariant. R == 0 is accepted and
  /// means "no training".
  void validate() const;
};

ClassDistribution normalize(const ClassCounts& counts);

/// Data-size weighted mixture of per-device distributions, renormalized.
ClassDistribution estimate_global_distribution(
    std::span<const std::pair<std::int64_t, ClassDistribution>> devices);

/// Euclidean distance between two distributions.
double divergence(const ClassDistribution& p, const ClassDistribution& q);

}  // namespace fedgs
