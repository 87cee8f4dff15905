#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedgs/rng.hpp"
#include "fedgs/selection.hpp"

namespace fedgs {

inline constexpr std::uint64_t kDefaultBruteCap = 5'000'000;

/// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k) noexcept;

struct SamplerResult {
  BinaryVector x;
  double objective = 0.0;
  Seconds elapsed{0.0};
  std::uint64_t evaluations = 0;
  // Best objective seen so far after each trial (MC) or generation (GA,
  // index 0 is the initial population). Empty for single-shot samplers.
  std::vector<double> best_so_far;
};

SamplerResult sample_random(const SelectionProblem& problem, Rng& rng);

SamplerResult sample_monte_carlo(const SelectionProblem& problem, Rng& rng,
                                 std::uint64_t trials = 1000);

/// Exhaustive enumeration of every L_sel-subset. Throws InstanceTooLarge when
/// C(alpha, L_sel) exceeds `max_subsets`.
SamplerResult sample_brute(const SelectionProblem& problem,
                           std::uint64_t max_subsets = kDefaultBruteCap);

struct GeneticOptions {
  std::size_t population = 100;
  double mutation = 0.001;  // probability per offspring of one (1,0) swap
  std::size_t generations = 100;
};

SamplerResult sample_genetic(const SelectionProblem& problem, Rng& rng,
                             const GeneticOptions& options = {});

// GA operators, exposed for property tests.
BinaryVector one_point_crossover(std::span<const std::uint8_t> left,
                                 std::span<const std::uint8_t> right,
                                 std::size_t cut);
void repair_cardinality(BinaryVector& x, std::size_t cardinality, Rng& rng);
void swap_mutation(BinaryVector& x, Rng& rng);

enum class SamplerKind { GbpCs, Random, MonteCarlo, Brute, Genetic };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::GbpCs;
  Initializer initializer = Initializer::MPInv;
  std::size_t max_steps = 0;
  std::uint64_t mc_trials = 1000;
  std::uint64_t brute_cap = kDefaultBruteCap;
  GeneticOptions genetic;

  /// "gbp-cs", "gbp-cs:zero", "gbp-cs:random", "random", "mc", "brute", "ga".
  std::string name() const;
};

/// Throws InvalidConfig for names outside the closed set.
SamplerSpec parse_sampler(std::string_view name);

SamplerResult run_sampler(const SamplerSpec& spec,
                          const SelectionProblem& problem, Rng& rng);

struct BenchRow {
  std::size_t instance_id = 0;
  std::string sampler;
  double objective = 0.0;
  double divergence = 0.0;
  double wall_ms = 0.0;
  std::uint64_t evaluations = 0;
  std::optional<ErrorCode> error;
};

/// Runs every sampler on every problem. Each cell draws from its own stream
/// derived from (seed, problem index, sampler index); sampler failures are
/// recorded in the row and the sweep continues.
std::vector<BenchRow> bench_samplers(const std::vector<SelectionProblem>& problems,
                                     const std::vector<SamplerSpec>& samplers,
                                     std::uint64_t seed, std::size_t workers = 1);

/// CSV with header instance_id,sampler,objective,divergence,wall_ms,
/// evaluations,status. With `timing` false the wall_ms column is written as 0
/// so that output is byte-reproducible.
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows,
                     bool timing = true);

/// Synthetic selection instances shaped like one group's selection step of
/// the simulator: every device of a `groups`-group federation draws its label
/// distribution from Dirichlet(concentration * 1_F), the target distribution
/// is the federation-wide mixture, and the instance is built from the next
/// batch (multinomial, `batch_size` samples) of each device in group 0.
struct FuzzSpec {
  std::size_t classes = 10;      // F
  std::size_t candidates = 20;   // alpha
  std::size_t presampled = 2;    // L_rnd
  std::size_t cardinality = 5;   // L_sel
  std::size_t batch_size = 32;   // n
  std::size_t groups = 10;
  double concentration = 0.1;
};

SelectionProblem make_fuzz_problem(const FuzzSpec& spec, Rng& rng);

}  // namespace fedgs
