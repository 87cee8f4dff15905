#include "fedgs/selection.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedgs {

namespace {

using Clock = std::chrono::steady_clock;

void require_candidates(const SelectionProblem& problem) {
  if (problem.candidates() == 0) {
    throw Error(ErrorCode::DegenerateProblem, "problem has no candidates");
  }
}

}  // namespace

std::size_t count_ones(std::span<const std::uint8_t> x) noexcept {
  return static_cast<std::size_t>(
      std::count_if(x.begin(), x.end(), [](std::uint8_t v) { return v != 0; }));
}

std::vector<std::size_t> selected_indices(std::span<const std::uint8_t> x) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0) out.push_back(i);
  }
  return out;
}

BinaryVector indicator(std::size_t length, std::span<const std::size_t> ones) {
  BinaryVector x(length, 0);
  for (std::size_t i : ones) x.at(i) = 1;
  return x;
}

SelectionProblem::SelectionProblem(Eigen::MatrixXi counts,
                                   Eigen::VectorXd target,
                                   std::size_t cardinality, double scale)
    : counts_(std::move(counts)),
      target_(std::move(target)),
      cardinality_(cardinality),
      scale_(scale) {
  if (counts_.rows() != target_.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "target length differs from the class count of A");
  }
  if ((counts_.array() < 0).any()) {
    throw Error(ErrorCode::DegenerateProblem, "A has negative entries");
  }
  if (cardinality_ > candidates()) {
    throw Error(ErrorCode::DegenerateProblem,
                "L_sel = " + std::to_string(cardinality_) + " exceeds alpha = " +
                    std::to_string(candidates()));
  }
  if (!target_.allFinite()) {
    throw Error(ErrorCode::DegenerateProblem, "target has non-finite entries");
  }
  if (scale_ <= 0.0) {
    // Unknown normalizer: assume no pre-sampled devices, every candidate
    // contributes its own column total.
    const double mean_total =
        candidates() == 0 ? 0.0
                          : static_cast<double>(counts_.sum()) /
                                static_cast<double>(candidates());
    scale_ = mean_total * static_cast<double>(cardinality_);
    if (scale_ <= 0.0) scale_ = 1.0;
  }
  matrix_ = counts_.cast<double>();
}

Eigen::VectorXd SelectionProblem::residual(std::span<const std::uint8_t> x) const {
  if (x.size() != candidates()) {
    throw Error(ErrorCode::LengthMismatch, "selection vector length != alpha");
  }
  Eigen::VectorXd r = -target_;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] != 0) r += matrix_.col(static_cast<Eigen::Index>(j));
  }
  return r;
}

double SelectionProblem::objective(std::span<const std::uint8_t> x) const {
  return residual(x).norm();
}

double SelectionProblem::divergence_of(double objective) const {
  return objective / scale_;
}

SelectionProblem build_problem(std::span<const ClassCounts> candidates,
                               const ClassCounts& presampled_total,
                               const ClassDistribution& p_real,
                               std::size_t batch_size, std::size_t selected,
                               std::size_t cardinality,
                               BatchSizePolicy policy) {
  const std::size_t classes = p_real.size();
  if (presampled_total.size() != classes) {
    throw Error(ErrorCode::LengthMismatch, "presampled histogram length != F");
  }
  if (cardinality > selected) {
    throw Error(ErrorCode::DegenerateProblem, "L_sel exceeds L");
  }
  Eigen::MatrixXi counts(static_cast<Eigen::Index>(classes),
                         static_cast<Eigen::Index>(candidates.size()));
  double column_sum = 0.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const ClassCounts& c = candidates[j];
    if (c.size() != classes) {
      throw Error(ErrorCode::LengthMismatch,
                  "candidate " + std::to_string(j) + " histogram length != F");
    }
    if (policy == BatchSizePolicy::Strict &&
        c.total() != static_cast<std::int64_t>(batch_size)) {
      throw Error(ErrorCode::UnequalBatchSizes,
                  "candidate " + std::to_string(j) + " holds " +
                      std::to_string(c.total()) + " samples, expected " +
                      std::to_string(batch_size));
    }
    column_sum += static_cast<double>(c.total());
    for (std::size_t i = 0; i < classes; ++i) {
      counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<int>(c[i]);
    }
  }

  const double presampled = static_cast<double>(presampled_total.total());
  double scale = 0.0;
  if (policy == BatchSizePolicy::Strict) {
    const auto expected =
        static_cast<std::int64_t>(batch_size * (selected - cardinality));
    if (presampled_total.total() != expected) {
      throw Error(ErrorCode::UnequalBatchSizes,
                  "pre-sampled devices hold " +
                      std::to_string(presampled_total.total()) +
                      " samples, expected " + std::to_string(expected));
    }
    scale = static_cast<double>(batch_size * selected);
  } else {
    const double nominal = candidates.empty()
                               ? static_cast<double>(batch_size)
                               : column_sum / static_cast<double>(candidates.size());
    scale = nominal * static_cast<double>(cardinality) + presampled;
  }

  Eigen::VectorXd target(static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < classes; ++i) {
    target(static_cast<Eigen::Index>(i)) =
        scale * p_real[i] - static_cast<double>(presampled_total[i]);
  }
  return SelectionProblem(std::move(counts), std::move(target), cardinality,
                          scale > 0.0 ? scale : 1.0);
}

std::string_view to_string(Initializer init) {
  switch (init) {
    case Initializer::MPInv: return "mpinv";
    case Initializer::Zero: return "zero";
    case Initializer::Random: return "random";
  }
  return "unknown";
}

Initializer parse_initializer(std::string_view name) {
  if (name == "mpinv") return Initializer::MPInv;
  if (name == "zero") return Initializer::Zero;
  if (name == "random") return Initializer::Random;
  throw Error(ErrorCode::InvalidConfig,
              "unknown initializer '" + std::string(name) +
                  "' (expected mpinv|zero|random)");
}

Eigen::VectorXd min_norm_solution(const SelectionProblem& problem) {
  require_candidates(problem);
  const Eigen::MatrixXd& a = problem.matrix();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double cutoff = sigma.size() > 0 ? 1e-10 * sigma(0) : 0.0;
  Eigen::VectorXd projected = svd.matrixU().transpose() * problem.target();
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    projected(i) = sigma(i) > cutoff && sigma(i) > 0.0 ? projected(i) / sigma(i) : 0.0;
  }
  return svd.matrixV() * projected;
}

BinaryVector top_k(const Eigen::VectorXd& values, std::size_t count) {
  const auto n = static_cast<std::size_t>(values.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values(static_cast<Eigen::Index>(a)) > values(static_cast<Eigen::Index>(b));
  });
  order.resize(std::min(count, n));
  return indicator(n, order);
}

Initialization init_mpinv(const SelectionProblem& problem) {
  require_candidates(problem);
  if (problem.cardinality() == problem.candidates()) {
    return {BinaryVector(problem.candidates(), 1), {}};
  }
  return {top_k(min_norm_solution(problem), problem.cardinality()), {}};
}

Initialization init_zero(const SelectionProblem& problem) {
  require_candidates(problem);
  Initialization init{BinaryVector(problem.candidates(), 0), {}};
  Eigen::VectorXd r = -problem.target();
  for (std::size_t step = 0; step < problem.cardinality(); ++step) {
    const Eigen::VectorXd g = problem.matrix().transpose() * r;
    std::size_t best = problem.candidates();
    for (std::size_t i = 0; i < problem.candidates(); ++i) {
      if (init.x[i] != 0) continue;
      if (best == problem.candidates() ||
          g(static_cast<Eigen::Index>(i)) < g(static_cast<Eigen::Index>(best))) {
        best = i;
      }
    }
    init.x[best] = 1;
    init.warmup.push_back(best);
    r += problem.matrix().col(static_cast<Eigen::Index>(best));
  }
  return init;
}

Initialization init_random(const SelectionProblem& problem, Rng& rng) {
  require_candidates(problem);
  const auto ones = sample_subset(rng, problem.candidates(), problem.cardinality());
  return {indicator(problem.candidates(), ones), {}};
}

Eigen::VectorXd gradient(const SelectionProblem& problem,
                         std::span<const std::uint8_t> x) {
  return problem.matrix().transpose() * problem.residual(x);
}

PermutationPair select_permutation_pair(std::span<const double> g,
                                        std::span<const std::uint8_t> x) {
  if (g.size() != x.size()) {
    throw Error(ErrorCode::LengthMismatch, "gradient and selection lengths differ");
  }
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::size_t on = none;
  std::size_t off = none;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0) {
      if (on == none || g[i] < g[on]) on = i;
    } else {
      if (off == none || g[i] > g[off]) off = i;
    }
  }
  if (on == none || off == none) {
    throw Error(ErrorCode::NoFeasiblePair,
                "selection vector must contain both zeros and ones");
  }
  return {on, off};
}

namespace {

GbpResult descend(const SelectionProblem& problem, Initialization start,
                  Initializer tag, std::size_t max_steps, Clock::time_point t0) {
  const std::size_t alpha = problem.candidates();
  if (start.x.size() != alpha) {
    throw Error(ErrorCode::LengthMismatch, "initial point length != alpha");
  }
  if (count_ones(start.x) != problem.cardinality()) {
    throw Error(ErrorCode::DegenerateProblem,
                "initial point violates the cardinality constraint");
  }

  GbpResult out;
  out.trace.initializer = tag;
  out.trace.warmup = std::move(start.warmup);
  out.trace.init_elapsed = Clock::now() - t0;

  BinaryVector x = std::move(start.x);
  Eigen::VectorXd r = problem.residual(x);
  double d = r.norm();
  out.trace.initial_distance = d;

  const bool forced = problem.cardinality() == 0 || problem.cardinality() == alpha;
  const std::size_t cap = max_steps != 0 ? max_steps : 10 * alpha;
  const Eigen::MatrixXd& a = problem.matrix();

  while (!forced && out.trace.steps.size() < cap && d > 0.0) {
    const Eigen::VectorXd g = a.transpose() * r;
    const PermutationPair pair = select_permutation_pair(
        std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), x);
    Eigen::VectorXd candidate = r + a.col(static_cast<Eigen::Index>(pair.switch_on)) -
                                a.col(static_cast<Eigen::Index>(pair.switch_off));
    const double next = candidate.norm();
    if (!(next < d)) break;
    x[pair.switch_on] = 1;
    x[pair.switch_off] = 0;
    r = std::move(candidate);
    d = next;
    out.trace.steps.push_back({d, pair, Clock::now() - t0});
  }

  out.solution.objective = problem.objective(x);
  out.solution.x = std::move(x);
  out.solution.iterations = out.trace.steps.size();
  out.solution.elapsed = Clock::now() - t0;
  return out;
}

}  // namespace

GbpResult gbp_cs(const SelectionProblem& problem, const GbpOptions& options,
                 Rng& rng) {
  const auto t0 = Clock::now();
  require_candidates(problem);
  Initialization start;
  switch (options.initializer) {
    case Initializer::MPInv: start = init_mpinv(problem); break;
    case Initializer::Zero: start = init_zero(problem); break;
    case Initializer::Random: start = init_random(problem, rng); break;
  }
  return descend(problem, std::move(start), options.initializer,
                 options.max_steps, t0);
}

GbpResult gbp_cs_from(const SelectionProblem& problem, Initialization start,
                      Initializer tag, std::size_t max_steps) {
  require_candidates(problem);
  return descend(problem, std::move(start), tag, max_steps, Clock::now());
}

nlohmann::json problem_to_json(const SelectionProblem& problem) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < problem.counts().rows(); ++i) {
    for (Eigen::Index j = 0; j < problem.counts().cols(); ++j) {
      a.push_back(problem.counts()(i, j));
    }
  }
  nlohmann::json y = nlohmann::json::array();
  for (Eigen::Index i = 0; i < problem.target().size(); ++i) {
    y.push_back(problem.target()(i));
  }
  return {{"F", problem.classes()},
          {"alpha", problem.candidates()},
          {"L_sel", problem.cardinality()},
          {"A", std::move(a)},
          {"y", std::move(y)},
          {"scale", problem.scale()}};
}

SelectionProblem problem_from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::MalformedInstance, what);
  };
  if (!doc.is_object()) fail("instance must be a JSON object");
  auto unsigned_field = [&](const char* key) -> std::size_t {
    if (!doc.contains(key) || !is_count(doc[key])) {
      fail(std::string("field '") + key + "' must be a non-negative integer");
    }
    return doc[key].get<std::size_t>();
  };
  const std::size_t classes = unsigned_field("F");
  const std::size_t alpha = unsigned_field("alpha");
  const std::size_t cardinality = unsigned_field("L_sel");
  if (!doc.contains("A") || !doc["A"].is_array()) fail("field 'A' must be an array");
  if (!doc.contains("y") || !doc["y"].is_array()) fail("field 'y' must be an array");
  const auto& a = doc["A"];
  const auto& y = doc["y"];
  if (a.size() != classes * alpha) {
    fail("field 'A' holds " + std::to_string(a.size()) + " entries, expected F*alpha = " +
         std::to_string(classes * alpha));
  }
  if (y.size() != classes) {
    fail("field 'y' holds " + std::to_string(y.size()) + " entries, expected F = " +
         std::to_string(classes));
  }
  Eigen::MatrixXi counts(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(alpha));
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < alpha; ++j) {
      const auto& v = a[i * alpha + j];
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        fail("A[" + std::to_string(i * alpha + j) + "] must be a non-negative integer");
      }
      counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v.get<int>();
    }
  }
  Eigen::VectorXd target(static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < classes; ++i) {
    if (!y[i].is_number()) fail("y[" + std::to_string(i) + "] must be a number");
    target(static_cast<Eigen::Index>(i)) = y[i].get<double>();
  }
  double scale = 0.0;
  if (doc.contains("scale")) {
    if (!doc["scale"].is_number()) fail("field 'scale' must be a number");
    scale = doc["scale"].get<double>();
  }
  if (cardinality > alpha) fail("L_sel exceeds alpha");
  return SelectionProblem(std::move(counts), std::move(target), cardinality, scale);
}

}  // namespace fedgs
