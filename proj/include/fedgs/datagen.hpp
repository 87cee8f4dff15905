#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "fedgs/core.hpp"
#include "fedgs/learn.hpp"
#include "json.hpp"

namespace fedgs {

struct SynthConfig {
  std::size_t classes = 10;          // F
  std::size_t feature_dim = 16;      // d
  std::size_t devices_per_group = 15;
  std::size_t groups = 5;            // M
  std::size_t batches_per_device = 100;
  std::size_t batch_size = 32;       // n
  double concentration = 0.1;        // Dirichlet kappa
  double separation = 4.0;           // RMS distance between class means
  double noise = 1.0;                // per-feature Gaussian noise
  std::size_t test_size = 5000;
  std::uint64_t seed = 0;
  bool regenerate = false;           // redraw a fresh pass when a stream runs dry

  void validate() const;
};

/// Missing or mistyped fields raise InvalidConfig naming the field.
SynthConfig synth_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SynthConfig& config);

/// Deterministic feature generator: x = mean[y] + noise * N(0, I).
class FeatureSource {
 public:
  explicit FeatureSource(const SynthConfig& config);

  Matrix features(const std::vector<int>& labels, Rng& rng) const;
  const Matrix& class_means() const noexcept { return means_; }
  const SynthConfig& config() const noexcept { return config_; }

 private:
  SynthConfig config_;
  Matrix means_;  // F x d
};

/// A device's FIFO queue of one-shot mini-batches.
///
/// Label histograms of queued batches are known up front; features of
/// synthetic batches are generated when the batch is fetched. Only
/// `peek_next_histogram` is visible to the selection step.
class DeviceStream {
 public:
  /// Materialized stream (manifest ingestion). `all_labels` are every label
  /// the device holds, including samples that did not fill a whole batch.
  DeviceStream(std::size_t classes, std::deque<Batch> batches,
               const std::vector<int>& all_labels);

  /// Synthetic stream drawn from `source_distribution`.
  DeviceStream(std::shared_ptr<const FeatureSource> source, std::size_t group,
               std::size_t device, ClassDistribution source_distribution);

  ClassCounts peek_next_histogram() const;
  Batch fetch_batch();

  /// Batches left in the current pass.
  std::size_t remaining() const noexcept { return queue_.size(); }
  bool exhausted() const noexcept { return queue_.empty(); }
  /// True if `count` more batches can be fetched.
  bool can_supply(std::size_t count) const noexcept;
  std::size_t fetched() const noexcept { return fetched_; }

  /// N: samples in the initial stream.
  std::int64_t data_size() const noexcept { return label_totals_.total(); }
  /// Normalized label totals of the initial stream.
  ClassDistribution local_distribution() const { return normalize(label_totals_); }
  const ClassCounts& label_totals() const noexcept { return label_totals_; }
  /// Generating distribution of a synthetic stream; the empirical one
  /// otherwise.
  const ClassDistribution& source_distribution() const noexcept { return source_dist_; }

  /// Every queued batch with features materialized, without consuming.
  std::vector<Batch> snapshot() const;

 private:
  struct Pending {
    std::vector<int> labels;
    std::optional<Matrix> features;
    std::uint64_t pass = 0;
    std::uint64_t index = 0;
  };

  void draw_pass(std::uint64_t pass);
  Matrix materialize(const Pending& p) const;

  std::size_t classes_;
  std::shared_ptr<const FeatureSource> source_;
  std::size_t group_ = 0;
  std::size_t device_ = 0;
  ClassDistribution source_dist_;
  ClassCounts label_totals_;
  std::deque<Pending> queue_;
  std::uint64_t pass_ = 0;
  std::size_t fetched_ = 0;
};

struct Federation {
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  std::size_t batch_size = 0;
  std::vector<std::vector<DeviceStream>> groups;
  Batch test;

  std::size_t device_count() const noexcept;
  /// Data-size weighted mixture of every device's local distribution.
  ClassDistribution global_distribution() const;
};

Federation generate_federation(const SynthConfig& config);

/// Manifest JSON: {F, d, n, devices: [{group, device, samples: [{x, y}]}],
/// test: [{x, y}]}. Streams are cut into consecutive batches of n samples;
/// a trailing partial batch is not queued.
Federation load_manifest(const std::filesystem::path& path);
Federation parse_manifest(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const Federation& federation);
void export_manifest(const Federation& federation, const std::filesystem::path& path);

}  // namespace fedgs
