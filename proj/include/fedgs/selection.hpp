#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fedgs/core.hpp"
#include "fedgs/rng.hpp"
#include "json.hpp"

namespace fedgs {

using BinaryVector = std::vector<std::uint8_t>;
using Seconds = std::chrono::duration<double>;

std::size_t count_ones(std::span<const std::uint8_t> x) noexcept;
std::vector<std::size_t> selected_indices(std::span<const std::uint8_t> x);
BinaryVector indicator(std::size_t length, std::span<const std::size_t> ones);

/// Cardinality-constrained 0-1 least squares: min ||A x - y|| subject to
/// x binary with exactly `cardinality()` ones.
///
/// Column j of A is the next-batch label histogram of candidate device j.
/// `scale()` is the total sample count of a full selection (n * L), which maps
/// an objective value back to a distribution divergence.
class SelectionProblem {
 public:
  SelectionProblem(Eigen::MatrixXi counts, Eigen::VectorXd target,
                   std::size_t cardinality, double scale = 0.0);

  std::size_t classes() const noexcept { return static_cast<std::size_t>(counts_.rows()); }
  std::size_t candidates() const noexcept { return static_cast<std::size_t>(counts_.cols()); }
  std::size_t cardinality() const noexcept { return cardinality_; }
  double scale() const noexcept { return scale_; }

  const Eigen::MatrixXi& counts() const noexcept { return counts_; }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  const Eigen::VectorXd& target() const noexcept { return target_; }

  Eigen::VectorXd residual(std::span<const std::uint8_t> x) const;
  double objective(std::span<const std::uint8_t> x) const;

  /// objective / scale; equals the L2 distance between the selection's
  /// aggregate class distribution and the target distribution when batch
  /// sizes are equal.
  double divergence_of(double objective) const;

 private:
  Eigen::MatrixXi counts_;
  Eigen::MatrixXd matrix_;
  Eigen::VectorXd target_;
  std::size_t cardinality_;
  double scale_;
};

enum class BatchSizePolicy {
  Strict,   // reject candidates whose totals differ
  Relaxed,  // nominal batch = mean candidate total
};

/// Builds the linear selection problem y = n*L*p_real - b from the candidates'
/// declared histograms and the histogram total of the pre-sampled devices.
/// Only class counts enter here; features and labels never reach selection.
SelectionProblem build_problem(std::span<const ClassCounts> candidates,
                               const ClassCounts& presampled_total,
                               const ClassDistribution& p_real,
                               std::size_t batch_size, std::size_t selected,
                               std::size_t cardinality,
                               BatchSizePolicy policy = BatchSizePolicy::Strict);

enum class Initializer { MPInv, Zero, Random };

std::string_view to_string(Initializer init);
Initializer parse_initializer(std::string_view name);

struct Initialization {
  BinaryVector x;
  std::vector<std::size_t> warmup;  // indices switched on by the zero warm-up
};

/// Minimum-norm least-squares solution of A x = y. Singular values below
/// 1e-10 * sigma_max are treated as zero.
Eigen::VectorXd min_norm_solution(const SelectionProblem& problem);

/// Indices of the `count` largest entries (ties: lowest index first).
BinaryVector top_k(const Eigen::VectorXd& values, std::size_t count);

Initialization init_mpinv(const SelectionProblem& problem);
Initialization init_zero(const SelectionProblem& problem);
Initialization init_random(const SelectionProblem& problem, Rng& rng);

/// A^T (A x - y): the direction of the objective's gradient, without the
/// 1/||A x - y|| factor (which does not change any argmin/argmax).
Eigen::VectorXd gradient(const SelectionProblem& problem,
                         std::span<const std::uint8_t> x);

struct PermutationPair {
  std::size_t switch_on;   // zero-valued index with the smallest gradient
  std::size_t switch_off;  // one-valued index with the largest gradient

  friend bool operator==(const PermutationPair&, const PermutationPair&) = default;
};

PermutationPair select_permutation_pair(std::span<const double> g,
                                        std::span<const std::uint8_t> x);

struct TraceStep {
  double distance;
  PermutationPair pair;
  Seconds elapsed;  // since the solver was entered, initialization included
};

struct SolverTrace {
  Initializer initializer = Initializer::MPInv;
  std::vector<std::size_t> warmup;
  double initial_distance = 0.0;
  Seconds init_elapsed{0.0};
  std::vector<TraceStep> steps;  // accepted steps only

  /// Distance tracked through incremental residual updates.
  double tracked_distance() const noexcept {
    return steps.empty() ? initial_distance : steps.back().distance;
  }
};

struct SelectionSolution {
  BinaryVector x;
  double objective = 0.0;      // recomputed from scratch
  std::size_t iterations = 0;  // accepted permutations
  Seconds elapsed{0.0};
};

struct GbpOptions {
  Initializer initializer = Initializer::MPInv;
  std::size_t max_steps = 0;  // 0 selects the default cap of 10 * alpha
};

struct GbpResult {
  SelectionSolution solution;
  SolverTrace trace;
};

/// Gradient-based binary permutation: from the initial point, repeatedly
/// switches on the zero-valued entry with the smallest gradient and switches
/// off the one-valued entry with the largest gradient. A swap is kept only if
/// it strictly lowers the distance; the first non-improving swap ends the
/// search. `rng` is consumed only by the random initializer.
GbpResult gbp_cs(const SelectionProblem& problem, const GbpOptions& options,
                 Rng& rng);

/// Same descent, from a caller-provided starting point.
GbpResult gbp_cs_from(const SelectionProblem& problem, Initialization start,
                      Initializer tag, std::size_t max_steps);

nlohmann::json problem_to_json(const SelectionProblem& problem);
SelectionProblem problem_from_json(const nlohmann::json& doc);

}  // namespace fedgs
