#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedgs/core.hpp"
#include "fedgs/datagen.hpp"
#include "fedgs/learn.hpp"
#include "fedgs/samplers.hpp"
#include "fedgs/timecost.hpp"
#include "json.hpp"

namespace fedgs {

struct SimConfig {
  FederationTopology topology;
  /// Hidden layer sizes; input and output widths come from the data.
  std::vector<std::size_t> hidden;
  /// Synthetic data (classes, groups, group sizes, batch size and seed are
  /// taken from the topology and master seed) or a manifest path.
  std::optional<SynthConfig> synthetic;
  std::filesystem::path manifest;
  SamplerSpec sampler;
  BatchSizePolicy batch_policy = BatchSizePolicy::Strict;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double target_accuracy = 0.82;
  /// When set, each round's simulated wall time is accumulated in the
  /// metrics. T_select is `select_time` if given, else the measured mean
  /// selection time per call.
  std::optional<CostParams> cost;
  std::optional<double> select_time;

  /// Throws InvalidConfig.
  void validate() const;
  /// The SynthConfig this run generates, with the topology fields filled in.
  SynthConfig synth_config() const;
};

/// Parses {topology: {...}, model: {hidden}, data: {synthetic: {...}} |
/// {manifest: path}, sampler, initializer, batch_policy, seed, workers,
/// target_accuracy, cost, select_time}. Relative manifest paths resolve
/// against `base`.
SimConfig sim_config_from_json(const nlohmann::json& doc,
                               const std::filesystem::path& base = {});
nlohmann::json to_json(const SimConfig& config);

/// Loads or generates the federation and checks it against the topology.
Federation load_federation(const SimConfig& config);

struct RoundMetrics {
  std::size_t round = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<double> divergence;  // per group, mean over the round's iterations
  double selection_seconds = 0.0;  // cumulative
  std::optional<double> simulated_seconds;  // cumulative
};

enum class SimStatus { Completed, InsufficientEligibleDevices };
std::string_view to_string(SimStatus status);

struct SimResult {
  ModelParams model;
  std::vector<RoundMetrics> metrics;
  SimStatus status = SimStatus::Completed;
  std::string message;
  std::size_t iterations = 0;               // global iterations executed
  std::vector<std::size_t> consumed;        // batches fetched per group
  double selection_seconds = 0.0;
};

/// One group's selection at one iteration.
struct GroupSelection {
  std::vector<std::size_t> devices;        // ascending device index
  std::vector<ClassCounts> histograms;     // declared next batches, same order
  double divergence = 0.0;
  double seconds = 0.0;                    // sampler wall time
};

/// Pre-samples L_rnd of the eligible devices uniformly, then picks L_sel of
/// the remaining eligible devices (in index order) with the sampler. A device
/// is eligible when it can supply `supply` more batches. Throws
/// InsufficientEligibleDevices when fewer than L are eligible.
GroupSelection select_group(std::span<const DeviceStream> streams,
                            const ClassDistribution& p_real,
                            const FederationTopology& topology,
                            const SamplerSpec& sampler, Rng& rng,
                            BatchSizePolicy policy = BatchSizePolicy::Strict,
                            std::size_t supply = 1);

/// Distance between the aggregate distribution of the selected histograms
/// and p_real.
double divergence_probe(std::span<const ClassCounts> selected, const ClassDistribution& p_real);
std::vector<double> divergence_probe(const std::vector<std::vector<ClassCounts>>& groups,
                                     const ClassDistribution& p_real);

/// The model both protocols start from.
ModelParams initial_model(const SimConfig& config, const Federation& federation);

SimResult run_fedgs(const SimConfig& config);
SimResult run_fedgs(const SimConfig& config, Federation federation,
                    std::optional<ModelParams> start = std::nullopt);
SimResult run_fedavg(const SimConfig& config);
SimResult run_fedavg(const SimConfig& config, Federation federation,
                     std::optional<ModelParams> start = std::nullopt);

/// First round whose accuracy reaches `target`, if any.
std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> metrics, double target);

/// One JSON object per line. Selection time depends on the machine and is
/// written only with `timing`.
void write_metrics_jsonl(std::ostream& out, std::span<const RoundMetrics> metrics,
                         bool timing = false);
nlohmann::json to_json(const RoundMetrics& m, bool timing = false);

/// Header protocol,status,rounds,final_accuracy,final_loss,rounds_to_target,
/// target_accuracy,selection_seconds.
void write_summary_csv(std::ostream& out, std::string_view protocol, const SimResult& result,
                       double target_accuracy, bool timing = false);

}  // namespace fedgs
