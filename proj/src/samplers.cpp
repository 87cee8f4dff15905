#include "fedgs/samplers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "fedgs/parallel.hpp"

namespace fedgs {

namespace {

using Clock = std::chrono::steady_clock;

void require_candidates(const SelectionProblem& problem) {
  if (problem.candidates() == 0) {
    throw Error(ErrorCode::DegenerateProblem, "problem has no candidates");
  }
}

}  // namespace

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) noexcept {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    acc = acc * (n - k + i) / i;
    if (acc > std::numeric_limits<std::uint64_t>::max()) {
      return std::numeric_limits<std::uint64_t>::max();
    }
  }
  return static_cast<std::uint64_t>(acc);
}

SamplerResult sample_random(const SelectionProblem& problem, Rng& rng) {
  const auto t0 = Clock::now();
  require_candidates(problem);
  SamplerResult out;
  out.x = indicator(problem.candidates(),
                    sample_subset(rng, problem.candidates(), problem.cardinality()));
  out.objective = problem.objective(out.x);
  out.evaluations = 1;
  out.elapsed = Clock::now() - t0;
  return out;
}

SamplerResult sample_monte_carlo(const SelectionProblem& problem, Rng& rng,
                                 std::uint64_t trials) {
  const auto t0 = Clock::now();
  require_candidates(problem);
  if (trials < 1) throw Error(ErrorCode::InvalidParams, "trials must be >= 1");
  SamplerResult out;
  out.objective = std::numeric_limits<double>::infinity();
  out.best_so_far.reserve(trials);
  for (std::uint64_t t = 0; t < trials; ++t) {
    BinaryVector x = indicator(
        problem.candidates(),
        sample_subset(rng, problem.candidates(), problem.cardinality()));
    const double d = problem.objective(x);
    if (d < out.objective) {
      out.objective = d;
      out.x = std::move(x);
    }
    out.best_so_far.push_back(out.objective);
  }
  out.evaluations = trials;
  out.elapsed = Clock::now() - t0;
  return out;
}

SamplerResult sample_brute(const SelectionProblem& problem,
                           std::uint64_t max_subsets) {
  const auto t0 = Clock::now();
  require_candidates(problem);
  const std::size_t alpha = problem.candidates();
  const std::size_t k = problem.cardinality();
  const std::uint64_t total = binomial(alpha, k);
  if (total > max_subsets) {
    throw Error(ErrorCode::InstanceTooLarge,
                "C(" + std::to_string(alpha) + ", " + std::to_string(k) + ") = " +
                    std::to_string(total) + " subsets exceeds the cap of " +
                    std::to_string(max_subsets));
  }

  SamplerResult out;
  out.evaluations = total;
  if (k == 0) {
    out.x.assign(alpha, 0);
    out.objective = problem.objective(out.x);
    out.elapsed = Clock::now() - t0;
    return out;
  }

  const auto classes = static_cast<std::size_t>(problem.classes());
  const Eigen::MatrixXd& a = problem.matrix();
  // partial[depth] holds A x - y for the first `depth` chosen columns.
  std::vector<std::vector<double>> partial(k, std::vector<double>(classes));
  for (std::size_t i = 0; i < classes; ++i) {
    partial[0][i] = -problem.target()(static_cast<Eigen::Index>(i));
  }
  std::vector<std::size_t> chosen(k);
  std::vector<std::size_t> best(k);
  double best_sq = std::numeric_limits<double>::infinity();

  // Lexicographic enumeration of index combinations.
  for (std::size_t d = 0; d < k; ++d) chosen[d] = d;
  for (std::size_t d = 1; d < k; ++d) {
    const double* col = a.col(static_cast<Eigen::Index>(chosen[d - 1])).data();
    for (std::size_t i = 0; i < classes; ++i) partial[d][i] = partial[d - 1][i] + col[i];
  }
  while (true) {
    const double* base = partial[k - 1].data();
    const double* col = a.col(static_cast<Eigen::Index>(chosen[k - 1])).data();
    double sq = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
      const double v = base[i] + col[i];
      sq += v * v;
    }
    if (sq < best_sq) {
      best_sq = sq;
      best = chosen;
    }
    // Advance to the next combination.
    std::size_t d = k;
    while (d > 0 && chosen[d - 1] == alpha - k + (d - 1)) --d;
    if (d == 0) break;
    ++chosen[d - 1];
    for (std::size_t e = d; e < k; ++e) chosen[e] = chosen[e - 1] + 1;
    for (std::size_t e = d; e < k; ++e) {
      const double* c = a.col(static_cast<Eigen::Index>(chosen[e - 1])).data();
      for (std::size_t i = 0; i < classes; ++i) partial[e][i] = partial[e - 1][i] + c[i];
    }
  }

  out.x = indicator(alpha, best);
  out.objective = problem.objective(out.x);
  out.elapsed = Clock::now() - t0;
  return out;
}

BinaryVector one_point_crossover(std::span<const std::uint8_t> left,
                                 std::span<const std::uint8_t> right,
                                 std::size_t cut) {
  if (left.size() != right.size() || cut > left.size()) {
    throw Error(ErrorCode::LengthMismatch, "crossover parents differ in length");
  }
  BinaryVector child(left.begin(), left.end());
  std::copy(right.begin() + static_cast<std::ptrdiff_t>(cut), right.end(),
            child.begin() + static_cast<std::ptrdiff_t>(cut));
  return child;
}

void repair_cardinality(BinaryVector& x, std::size_t cardinality, Rng& rng) {
  std::vector<std::size_t> ones;
  std::vector<std::size_t> zeros;
  for (std::size_t i = 0; i < x.size(); ++i) (x[i] != 0 ? ones : zeros).push_back(i);
  if (ones.size() > cardinality) {
    for (std::size_t pick : sample_subset(rng, ones.size(), ones.size() - cardinality)) {
      x[ones[pick]] = 0;
    }
  } else if (ones.size() < cardinality) {
    if (cardinality > x.size()) {
      throw Error(ErrorCode::DegenerateProblem, "cardinality exceeds vector length");
    }
    for (std::size_t pick : sample_subset(rng, zeros.size(), cardinality - ones.size())) {
      x[zeros[pick]] = 1;
    }
  }
}

void swap_mutation(BinaryVector& x, Rng& rng) {
  std::vector<std::size_t> ones;
  std::vector<std::size_t> zeros;
  for (std::size_t i = 0; i < x.size(); ++i) (x[i] != 0 ? ones : zeros).push_back(i);
  if (ones.empty() || zeros.empty()) return;
  x[ones[rng.below(ones.size())]] = 0;
  x[zeros[rng.below(zeros.size())]] = 1;
}

SamplerResult sample_genetic(const SelectionProblem& problem, Rng& rng,
                             const GeneticOptions& options) {
  const auto t0 = Clock::now();
  require_candidates(problem);
  if (options.population < 2) {
    throw Error(ErrorCode::DegenerateProblem, "GA population must be >= 2");
  }
  if (!(options.mutation >= 0.0 && options.mutation <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "mutation probability outside [0, 1]");
  }
  const std::size_t alpha = problem.candidates();
  const std::size_t k = problem.cardinality();
  const std::size_t size = options.population;

  std::vector<BinaryVector> population(size);
  std::vector<double> fitness(size);
  for (std::size_t i = 0; i < size; ++i) {
    population[i] = indicator(alpha, sample_subset(rng, alpha, k));
    fitness[i] = problem.objective(population[i]);
  }

  auto argmin = [&] {
    return static_cast<std::size_t>(
        std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
  };
  auto tournament = [&] {
    const auto a = static_cast<std::size_t>(rng.below(size));
    const auto b = static_cast<std::size_t>(rng.below(size));
    if (fitness[a] != fitness[b]) return fitness[a] < fitness[b] ? a : b;
    return std::min(a, b);
  };

  SamplerResult out;
  std::size_t elite = argmin();
  out.x = population[elite];
  out.objective = fitness[elite];
  out.best_so_far.push_back(out.objective);
  out.evaluations = size;

  std::vector<BinaryVector> next(size);
  std::vector<double> next_fitness(size);
  for (std::size_t gen = 0; gen < options.generations; ++gen) {
    next[0] = population[elite];
    next_fitness[0] = fitness[elite];
    for (std::size_t i = 1; i < size; ++i) {
      const std::size_t p1 = tournament();
      const std::size_t p2 = tournament();
      const std::size_t cut = alpha > 1 ? 1 + static_cast<std::size_t>(rng.below(alpha - 1)) : 0;
      BinaryVector child = one_point_crossover(population[p1], population[p2], cut);
      repair_cardinality(child, k, rng);
      if (rng.uniform() < options.mutation) swap_mutation(child, rng);
      next_fitness[i] = problem.objective(child);
      next[i] = std::move(child);
    }
    out.evaluations += size - 1;
    std::swap(population, next);
    std::swap(fitness, next_fitness);
    elite = argmin();
    if (fitness[elite] < out.objective) {
      out.objective = fitness[elite];
      out.x = population[elite];
    }
    out.best_so_far.push_back(out.objective);
  }
  out.elapsed = Clock::now() - t0;
  return out;
}

std::string SamplerSpec::name() const {
  switch (kind) {
    case SamplerKind::GbpCs:
      return initializer == Initializer::MPInv
                 ? "gbp-cs"
                 : "gbp-cs:" + std::string(to_string(initializer));
    case SamplerKind::Random: return "random";
    case SamplerKind::MonteCarlo: return "mc";
    case SamplerKind::Brute: return "brute";
    case SamplerKind::Genetic: return "ga";
  }
  return "unknown";
}

SamplerSpec parse_sampler(std::string_view name) {
  SamplerSpec spec;
  if (name == "gbp-cs" || name == "gbp-cs:mpinv") {
    spec.kind = SamplerKind::GbpCs;
  } else if (name.starts_with("gbp-cs:")) {
    spec.kind = SamplerKind::GbpCs;
    spec.initializer = parse_initializer(name.substr(7));
  } else if (name == "random") {
    spec.kind = SamplerKind::Random;
  } else if (name == "mc") {
    spec.kind = SamplerKind::MonteCarlo;
  } else if (name == "brute") {
    spec.kind = SamplerKind::Brute;
  } else if (name == "ga") {
    spec.kind = SamplerKind::Genetic;
  } else {
    throw Error(ErrorCode::InvalidConfig,
                "unknown sampler '" + std::string(name) +
                    "' (expected gbp-cs|random|mc|brute|ga)");
  }
  return spec;
}

SamplerResult run_sampler(const SamplerSpec& spec, const SelectionProblem& problem,
                          Rng& rng) {
  switch (spec.kind) {
    case SamplerKind::GbpCs: {
      GbpResult r = gbp_cs(problem, {spec.initializer, spec.max_steps}, rng);
      SamplerResult out;
      out.x = std::move(r.solution.x);
      out.objective = r.solution.objective;
      out.elapsed = r.solution.elapsed;
      out.evaluations = r.trace.steps.size() + 1;
      return out;
    }
    case SamplerKind::Random: return sample_random(problem, rng);
    case SamplerKind::MonteCarlo: return sample_monte_carlo(problem, rng, spec.mc_trials);
    case SamplerKind::Brute: return sample_brute(problem, spec.brute_cap);
    case SamplerKind::Genetic: return sample_genetic(problem, rng, spec.genetic);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown sampler kind");
}

std::vector<BenchRow> bench_samplers(const std::vector<SelectionProblem>& problems,
                                     const std::vector<SamplerSpec>& samplers,
                                     std::uint64_t seed, std::size_t workers) {
  if (problems.empty() || samplers.empty()) {
    throw Error(ErrorCode::InvalidParams, "benchmark needs problems and samplers");
  }
  std::vector<BenchRow> rows(problems.size() * samplers.size());
  parallel_for(rows.size(), workers, [&](std::size_t cell) {
    const std::size_t p = cell / samplers.size();
    const std::size_t s = cell % samplers.size();
    BenchRow& row = rows[cell];
    row.instance_id = p;
    row.sampler = samplers[s].name();
    Rng rng = Rng::derive(seed, StreamTag::Sampler, {p, s});
    try {
      const SamplerResult r = run_sampler(samplers[s], problems[p], rng);
      row.objective = r.objective;
      row.divergence = problems[p].divergence_of(r.objective);
      row.wall_ms = r.elapsed.count() * 1e3;
      row.evaluations = r.evaluations;
    } catch (const Error& e) {
      row.error = e.code();
    }
  });
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows,
                     bool timing) {
  out << "instance_id,sampler,objective,divergence,wall_ms,evaluations,status\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const BenchRow& row : rows) {
    line.str("");
    line << row.instance_id << ',' << row.sampler << ',';
    if (row.error) {
      line << ",,,0," << to_string(*row.error);
    } else {
      line << row.objective << ',' << row.divergence << ',' << (timing ? row.wall_ms : 0.0)
           << ',' << row.evaluations << ",ok";
    }
    out << line.str() << '\n';
  }
}

SelectionProblem make_fuzz_problem(const FuzzSpec& spec, Rng& rng) {
  if (spec.classes < 1 || spec.candidates < 1 || spec.cardinality > spec.candidates ||
      spec.batch_size < 1 || spec.groups < 1 || !(spec.concentration > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "invalid fuzz specification");
  }
  const std::size_t f = spec.classes;
  const std::size_t group_size = spec.candidates + spec.presampled;
  const std::vector<double> alpha(f, spec.concentration);

  std::vector<std::pair<std::int64_t, ClassDistribution>> federation;
  federation.reserve(group_size * spec.groups);
  for (std::size_t k = 0; k < group_size * spec.groups; ++k) {
    federation.emplace_back(static_cast<std::int64_t>(spec.batch_size),
                            ClassDistribution(sample_dirichlet(rng, alpha)));
  }
  const ClassDistribution p_real = estimate_global_distribution(federation);

  auto next_batch = [&](const ClassDistribution& local) {
    const std::vector<double> weights(local.probs().begin(), local.probs().end());
    ClassCounts counts(f);
    for (std::size_t s = 0; s < spec.batch_size; ++s) counts.add(sample_categorical(rng, weights));
    return counts;
  };
  ClassCounts presampled(f);
  for (std::size_t k = 0; k < spec.presampled; ++k) presampled += next_batch(federation[k].second);
  std::vector<ClassCounts> candidates;
  candidates.reserve(spec.candidates);
  for (std::size_t k = spec.presampled; k < group_size; ++k) {
    candidates.push_back(next_batch(federation[k].second));
  }
  return build_problem(candidates, presampled, p_real, spec.batch_size,
                       spec.presampled + spec.cardinality, spec.cardinality);
}

}  // namespace fedgs
