#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fedgs/error.hpp"
#include "fedgs/rng.hpp"

namespace fedgs {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected classifier: input_dim -> hidden... (tanh) -> classes.
/// With no hidden layers this is multinomial logistic regression.
struct ModelSpec {
  std::size_t input_dim = 1;
  std::size_t classes = 2;
  std::vector<std::size_t> hidden;

  void validate() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Flat parameter vector. Layer l occupies W_l (out x in, row-major)
/// followed by b_l (out).
struct ModelParams {
  ModelSpec spec;
  Eigen::VectorXd values;

  static ModelParams zeros(const ModelSpec& spec);
  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static ModelParams initialize(const ModelSpec& spec, Rng& rng);

  /// Throws ShapeMismatch if values.size() disagrees with the spec or any
  /// entry is non-finite.
  void validate() const;
};

struct Batch {
  Matrix features;          // n x d
  std::vector<int> labels;  // n labels in [0, F)

  std::size_t size() const noexcept { return labels.size(); }
};

/// Row-wise concatenation.
Batch concatenate(std::span<const Batch> batches);

struct LossAndGrad {
  double loss = 0.0;  // summed cross-entropy over the batch
  Eigen::VectorXd grad;
};

LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch);

/// params - (eta / n) * grad of the summed batch loss.
ModelParams local_step(const ModelParams& params, const Batch& batch, double eta);

/// Data-size weighted average sum_k (n_k / sum n) * w_k, folded in input order.
ModelParams internal_sync(std::span<const std::pair<std::size_t, ModelParams>> models);

/// Unweighted mean, folded in input order.
ModelParams external_sync(std::span<const ModelParams> models);

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

Evaluation evaluate(const ModelParams& params, const Batch& test);

/// One FedAvg round: every device starts from `global` and takes one local
/// step per batch in its list, in order; the results are averaged with
/// weights equal to each device's consumed sample count.
ModelParams fedavg_round(const ModelParams& global,
                         std::span<const std::vector<Batch>> device_batches,
                         double eta, std::size_t workers = 1);

/// Checkpoint: one line of JSON shape header, then the parameters as
/// little-endian IEEE-754 doubles.
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(const std::filesystem::path& path);

}  // namespace fedgs
