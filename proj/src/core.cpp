#include "fedgs/core.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace fedgs {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroTotal: return "ZeroTotal";
    case ErrorCode::EmptyFederation: return "EmptyFederation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::DegenerateProblem: return "DegenerateProblem";
    case ErrorCode::NoFeasiblePair: return "NoFeasiblePair";
    case ErrorCode::UnequalBatchSizes: return "UnequalBatchSizes";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::MalformedInstance: return "MalformedInstance";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::StreamExhausted: return "StreamExhausted";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InsufficientEligibleDevices:
      return "InsufficientEligibleDevices";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ClassCounts::ClassCounts(std::vector<std::int64_t> counts)
    : counts_(std::move(counts)) {
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    if (counts_[i] < 0) {
      throw Error(ErrorCode::InvalidDistribution,
                  "negative count at class " + std::to_string(i));
    }
  }
}

std::int64_t ClassCounts::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

void ClassCounts::add(std::size_t label, std::int64_t amount) {
  if (label >= counts_.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "label " + std::to_string(label) + " outside [0, " +
                    std::to_string(counts_.size()) + ")");
  }
  if (counts_[label] + amount < 0) {
    throw Error(ErrorCode::InvalidDistribution, "count would go negative");
  }
  counts_[label] += amount;
}

ClassCounts& ClassCounts::operator+=(const ClassCounts& other) {
  if (other.size() != size()) {
    throw Error(ErrorCode::LengthMismatch, "class count length mismatch");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ClassCounts histogram(std::span<const int> labels, std::size_t classes) {
  ClassCounts counts(classes);
  for (int label : labels) {
    if (label < 0) {
      throw Error(ErrorCode::LengthMismatch, "negative label");
    }
    counts.add(static_cast<std::size_t>(label));
  }
  return counts;
}

ClassDistribution::ClassDistribution(std::vector<double> probs)
    : probs_(std::move(probs)) {
  if (probs_.empty()) {
    throw Error(ErrorCode::InvalidDistribution, "distribution has no classes");
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorCode::InvalidDistribution,
                  "entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTolerance) {
    throw Error(ErrorCode::InvalidDistribution,
                "entries sum to " + std::to_string(sum));
  }
}

ClassDistribution ClassDistribution::uniform(std::size_t classes) {
  if (classes == 0) {
    throw Error(ErrorCode::InvalidDistribution, "distribution has no classes");
  }
  return ClassDistribution(
      std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

void FederationTopology::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::InvalidConfig, what);
  };
  if (devices_per_group.empty()) fail("at least one group is required");
  if (classes < 1) fail("classes must be >= 1");
  if (presampled > selected) fail("L_rnd must not exceed L");
  for (std::size_t m = 0; m < devices_per_group.size(); ++m) {
    if (selected > devices_per_group[m]) {
      fail("L exceeds the device count of group " + std::to_string(m));
    }
  }
  if (iterations_per_round < 1) fail("T must be >= 1");
  if (batch_size < 1) fail("n must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail("eta must be finite and >= 0");
  }
}

ClassDistribution normalize(const ClassCounts& counts) {
  const std::int64_t total = counts.total();
  if (total <= 0) throw Error(ErrorCode::ZeroTotal, "all counts are zero");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return ClassDistribution(std::move(probs));
}

ClassDistribution estimate_global_distribution(
    std::span<const std::pair<std::int64_t, ClassDistribution>> devices) {
  if (devices.empty()) {
    throw Error(ErrorCode::EmptyFederation, "no devices to aggregate");
  }
  const std::size_t classes = devices.front().second.size();
  std::vector<double> mix(classes, 0.0);
  std::int64_t total = 0;
  for (const auto& [size, dist] : devices) {
    if (size < 0) throw Error(ErrorCode::ZeroTotal, "negative data size");
    if (dist.size() != classes) {
      throw Error(ErrorCode::LengthMismatch, "device class counts differ");
    }
    total += size;
    for (std::size_t i = 0; i < classes; ++i) {
      mix[i] += static_cast<double>(size) * dist[i];
    }
  }
  if (total == 0) throw Error(ErrorCode::ZeroTotal, "federation holds no data");
  const double sum = std::accumulate(mix.begin(), mix.end(), 0.0);
  for (double& v : mix) v /= sum;
  return ClassDistribution(std::move(mix));
}

double divergence(const ClassDistribution& p, const ClassDistribution& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "distributions have different lengths");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - q[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace fedgs
