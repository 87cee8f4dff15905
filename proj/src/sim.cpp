#include "fedgs/sim.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <string>

#include "fedgs/parallel.hpp"

namespace fedgs {

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, what);
}

std::size_t json_count(const nlohmann::json& doc, const std::string& where, const char* key) {
  if (!doc.contains(key)) invalid("missing required field '" + where + key + "'");
  if (!is_count(doc[key])) {
    invalid("field '" + where + key + "' must be a non-negative integer");
  }
  return doc[key].get<std::size_t>();
}

double json_real(const nlohmann::json& doc, const std::string& where, const char* key) {
  if (!doc.contains(key)) invalid("missing required field '" + where + key + "'");
  if (!doc[key].is_number()) invalid("field '" + where + key + "' must be a number");
  return doc[key].get<double>();
}

std::string json_string(const nlohmann::json& doc, const char* key, std::string fallback) {
  if (!doc.contains(key)) return fallback;
  if (!doc[key].is_string()) invalid(std::string("field '") + key + "' must be a string");
  return doc[key].get<std::string>();
}

// Fields of the synthetic data block that the topology already determines.
constexpr const char* kDerivedSynthFields[] = {"classes", "groups", "devices_per_group",
                                               "batch_size", "seed"};

}  // namespace

void SimConfig::validate() const {
  topology.validate();
  if (synthetic.has_value() == !manifest.empty()) {
    invalid("exactly one data source (synthetic or manifest) is required");
  }
  if (synthetic) {
    const auto& k = topology.devices_per_group;
    if (std::adjacent_find(k.begin(), k.end(), std::not_equal_to<>()) != k.end()) {
      invalid("synthetic data needs the same device count in every group");
    }
    synth_config().validate();
  }
  if (workers < 1) invalid("workers must be >= 1");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    invalid("target_accuracy must lie in [0, 1]");
  }
  if (select_time && !(*select_time >= 0.0 && std::isfinite(*select_time))) {
    invalid("select_time must be finite and >= 0");
  }
  for (std::size_t h : hidden) {
    if (h < 1) invalid("hidden layer widths must be >= 1");
  }
}

SynthConfig SimConfig::synth_config() const {
  if (!synthetic) invalid("config has no synthetic data source");
  SynthConfig c = *synthetic;
  c.classes = topology.classes;
  c.groups = topology.groups();
  c.devices_per_group = topology.devices_per_group.empty() ? 0 : topology.devices_per_group[0];
  c.batch_size = topology.batch_size;
  c.seed = seed;
  return c;
}

SimConfig sim_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base) {
  if (!doc.is_object()) invalid("simulation config must be a JSON object");
  SimConfig c;

  if (!doc.contains("topology") || !doc["topology"].is_object()) {
    invalid("missing required object 'topology'");
  }
  const auto& t = doc["topology"];
  const std::string at = "topology.";
  const std::size_t groups = json_count(t, at, "groups");
  if (!t.contains("devices_per_group")) invalid("missing required field 'topology.devices_per_group'");
  const auto& k = t["devices_per_group"];
  if (is_count(k)) {
    c.topology.devices_per_group.assign(groups, k.get<std::size_t>());
  } else if (k.is_array()) {
    for (const auto& v : k) {
      if (!is_count(v)) invalid("'topology.devices_per_group' entries must be integers");
      c.topology.devices_per_group.push_back(v.get<std::size_t>());
    }
    if (c.topology.devices_per_group.size() != groups) {
      invalid("'topology.devices_per_group' must list one count per group");
    }
  } else {
    invalid("'topology.devices_per_group' must be an integer or an array");
  }
  c.topology.selected = json_count(t, at, "selected");
  c.topology.presampled = json_count(t, at, "presampled");
  c.topology.classes = json_count(t, at, "classes");
  c.topology.iterations_per_round = json_count(t, at, "iterations_per_round");
  c.topology.rounds = json_count(t, at, "rounds");
  c.topology.batch_size = json_count(t, at, "batch_size");
  c.topology.learning_rate = json_real(t, at, "learning_rate");

  if (doc.contains("model")) {
    const auto& m = doc["model"];
    if (!m.is_object()) invalid("'model' must be an object");
    if (m.contains("hidden")) {
      if (!m["hidden"].is_array()) invalid("'model.hidden' must be an array");
      for (const auto& h : m["hidden"]) {
        if (!is_count(h)) invalid("'model.hidden' entries must be integers");
        c.hidden.push_back(h.get<std::size_t>());
      }
    }
  }

  if (!doc.contains("data") || !doc["data"].is_object()) invalid("missing required object 'data'");
  const auto& d = doc["data"];
  if (d.contains("synthetic") == d.contains("manifest")) {
    invalid("'data' needs exactly one of 'synthetic' or 'manifest'");
  }
  if (d.contains("manifest")) {
    if (!d["manifest"].is_string()) invalid("'data.manifest' must be a path string");
    std::filesystem::path p = d["manifest"].get<std::string>();
    c.manifest = p.is_relative() && !base.empty() ? base / p : p;
  } else {
    nlohmann::json s = d["synthetic"];
    if (!s.is_object()) invalid("'data.synthetic' must be an object");
    for (const char* key : kDerivedSynthFields) {
      if (s.contains(key)) invalid(std::string("'data.synthetic.") + key + "' is set by the topology");
    }
    s["classes"] = c.topology.classes;
    s["groups"] = groups;
    s["devices_per_group"] = c.topology.devices_per_group.empty() ? 0 : c.topology.devices_per_group[0];
    s["batch_size"] = c.topology.batch_size;
    c.synthetic = synth_config_from_json(s);
  }

  c.sampler = parse_sampler(json_string(doc, "sampler", "gbp-cs"));
  if (doc.contains("initializer")) {
    if (c.sampler.kind != SamplerKind::GbpCs) invalid("'initializer' applies to the gbp-cs sampler only");
    c.sampler.initializer = parse_initializer(json_string(doc, "initializer", ""));
  }
  const std::string policy = json_string(doc, "batch_policy", "strict");
  if (policy == "strict") {
    c.batch_policy = BatchSizePolicy::Strict;
  } else if (policy == "relaxed") {
    c.batch_policy = BatchSizePolicy::Relaxed;
  } else {
    invalid("unknown batch_policy '" + policy + "' (expected strict or relaxed)");
  }
  if (doc.contains("seed")) c.seed = json_count(doc, "", "seed");
  if (doc.contains("workers")) c.workers = json_count(doc, "", "workers");
  if (doc.contains("target_accuracy")) c.target_accuracy = json_real(doc, "", "target_accuracy");
  if (doc.contains("select_time")) c.select_time = json_real(doc, "", "select_time");
  if (doc.contains("cost")) {
    try {
      c.cost = cost_params_from_json(doc["cost"]);
    } catch (const Error& e) {
      invalid(std::string("cost: ") + e.what());
    }
  }
  if (c.synthetic) c.synthetic = c.synth_config();
  c.validate();
  return c;
}

nlohmann::json to_json(const SimConfig& c) {
  const auto& t = c.topology;
  nlohmann::json doc;
  doc["topology"] = {{"groups", t.groups()},
                     {"devices_per_group", t.devices_per_group},
                     {"selected", t.selected},
                     {"presampled", t.presampled},
                     {"classes", t.classes},
                     {"iterations_per_round", t.iterations_per_round},
                     {"rounds", t.rounds},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.learning_rate}};
  doc["model"] = {{"hidden", c.hidden}};
  if (c.synthetic) {
    nlohmann::json s = to_json(*c.synthetic);
    for (const char* key : kDerivedSynthFields) s.erase(key);
    doc["data"] = {{"synthetic", std::move(s)}};
  } else {
    doc["data"] = {{"manifest", c.manifest.string()}};
  }
  doc["sampler"] = c.sampler.kind == SamplerKind::GbpCs ? "gbp-cs" : c.sampler.name();
  if (c.sampler.kind == SamplerKind::GbpCs) doc["initializer"] = to_string(c.sampler.initializer);
  doc["batch_policy"] = c.batch_policy == BatchSizePolicy::Strict ? "strict" : "relaxed";
  doc["seed"] = c.seed;
  doc["workers"] = c.workers;
  doc["target_accuracy"] = c.target_accuracy;
  if (c.select_time) doc["select_time"] = *c.select_time;
  if (c.cost) doc["cost"] = to_json(*c.cost);
  return doc;
}

Federation load_federation(const SimConfig& config) {
  config.validate();
  Federation fed = config.synthetic ? generate_federation(config.synth_config())
                                    : load_manifest(config.manifest);
  const auto& t = config.topology;
  if (fed.classes != t.classes) {
    invalid("data has " + std::to_string(fed.classes) + " classes, topology says " +
            std::to_string(t.classes));
  }
  if (fed.batch_size != t.batch_size) {
    invalid("data batch size " + std::to_string(fed.batch_size) + " differs from topology");
  }
  if (fed.groups.size() != t.groups()) {
    invalid("data has " + std::to_string(fed.groups.size()) + " groups, topology says " +
            std::to_string(t.groups()));
  }
  for (std::size_t m = 0; m < fed.groups.size(); ++m) {
    if (fed.groups[m].size() != t.devices_per_group[m]) {
      invalid("group " + std::to_string(m) + " has " + std::to_string(fed.groups[m].size()) +
              " devices, topology says " + std::to_string(t.devices_per_group[m]));
    }
  }
  return fed;
}

std::string_view to_string(SimStatus status) {
  switch (status) {
    case SimStatus::Completed: return "completed";
    case SimStatus::InsufficientEligibleDevices: return "insufficient_eligible_devices";
  }
  return "unknown";
}

double divergence_probe(std::span<const ClassCounts> selected, const ClassDistribution& p_real) {
  ClassCounts total(p_real.size());
  for (const ClassCounts& c : selected) total += c;
  return divergence(normalize(total), p_real);
}

std::vector<double> divergence_probe(const std::vector<std::vector<ClassCounts>>& groups,
                                     const ClassDistribution& p_real) {
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(divergence_probe(g, p_real));
  return out;
}

GroupSelection select_group(std::span<const DeviceStream> streams,
                            const ClassDistribution& p_real,
                            const FederationTopology& topology,
                            const SamplerSpec& sampler, Rng& rng,
                            BatchSizePolicy policy, std::size_t supply) {
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < streams.size(); ++k) {
    if (streams[k].can_supply(supply)) eligible.push_back(k);
  }
  const std::size_t L = topology.selected;
  if (eligible.size() < L) {
    throw Error(ErrorCode::InsufficientEligibleDevices,
                std::to_string(eligible.size()) + " eligible devices, " + std::to_string(L) +
                    " required");
  }

  std::vector<std::uint8_t> taken(eligible.size(), 0);
  for (std::size_t i : sample_subset(rng, eligible.size(), topology.presampled)) taken[i] = 1;
  ClassCounts presampled(topology.classes);
  std::vector<std::size_t> candidates;
  std::vector<ClassCounts> declared;
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    ClassCounts h = streams[eligible[i]].peek_next_histogram();
    if (taken[i]) {
      presampled += h;
    } else {
      candidates.push_back(i);
      declared.push_back(std::move(h));
    }
  }

  GroupSelection out;
  if (topology.optimized() > 0) {
    const SelectionProblem problem = build_problem(declared, presampled, p_real,
                                                   topology.batch_size, L,
                                                   topology.optimized(), policy);
    const SamplerResult r = run_sampler(sampler, problem, rng);
    out.seconds = r.elapsed.count();
    for (std::size_t j : selected_indices(r.x)) taken[candidates[j]] = 1;
  }
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    if (!taken[i]) continue;
    out.devices.push_back(eligible[i]);
    out.histograms.push_back(streams[eligible[i]].peek_next_histogram());
  }
  out.divergence = divergence_probe(out.histograms, p_real);
  return out;
}

ModelParams initial_model(const SimConfig& config, const Federation& federation) {
  ModelSpec spec{federation.feature_dim, federation.classes, config.hidden};
  Rng rng = Rng::derive(config.seed, StreamTag::ModelInit);
  return ModelParams::initialize(spec, rng);
}

namespace {

struct Run {
  const SimConfig& config;
  Federation fed;
  ClassDistribution p_real;
  SimResult result;
  std::vector<ModelParams> group_models;
  double simulated = 0.0;

  Run(const SimConfig& c, Federation f, std::optional<ModelParams> start)
      : config(c), fed(std::move(f)), p_real(fed.global_distribution()) {
    config.validate();
    result.model = start ? std::move(*start) : initial_model(config, fed);
    result.model.validate();
    if (result.model.spec.input_dim != fed.feature_dim || result.model.spec.classes != fed.classes) {
      throw Error(ErrorCode::ShapeMismatch, "starting model does not fit the data");
    }
    result.consumed.assign(fed.groups.size(), 0);
    group_models.assign(fed.groups.size(), result.model);
  }

  // Returns false (and records the status) if some group cannot field L
  // devices that can each supply `supply` batches.
  bool eligible(std::size_t supply, std::size_t t) {
    const std::size_t L = config.topology.selected;
    for (std::size_t m = 0; m < fed.groups.size(); ++m) {
      std::size_t n = 0;
      for (const DeviceStream& s : fed.groups[m]) n += s.can_supply(supply) ? 1 : 0;
      if (n < L) {
        result.status = SimStatus::InsufficientEligibleDevices;
        result.message = "iteration " + std::to_string(t) + ": group " + std::to_string(m) +
                         " has " + std::to_string(n) + " eligible devices, " +
                         std::to_string(L) + " required";
        return false;
      }
    }
    return true;
  }

  void close_round(std::size_t round, std::vector<double> divergence, double round_select_seconds,
                   std::size_t select_calls, bool fedgs) {
    result.model = external_sync(group_models);
    std::fill(group_models.begin(), group_models.end(), result.model);
    const Evaluation e = evaluate(result.model, fed.test);
    RoundMetrics m;
    m.round = round;
    m.accuracy = e.accuracy;
    m.loss = e.mean_loss;
    m.divergence = std::move(divergence);
    m.selection_seconds = result.selection_seconds;
    if (config.cost) {
      CostParams p = *config.cost;
      p.M = config.topology.groups();
      p.L = config.topology.selected;
      p.T = config.topology.iterations_per_round;
      p.T_select = config.select_time
                       ? *config.select_time
                       : (select_calls ? round_select_seconds / static_cast<double>(select_calls) : 0.0);
      simulated += fedgs ? total_fedgs(p) : total_fedavg(p);
      m.simulated_seconds = simulated;
    }
    result.metrics.push_back(std::move(m));
  }
};

}  // namespace

SimResult run_fedgs(const SimConfig& config) {
  return run_fedgs(config, load_federation(config));
}

SimResult run_fedgs(const SimConfig& config, Federation federation,
                    std::optional<ModelParams> start) {
  Run run(config, std::move(federation), std::move(start));
  const FederationTopology& topo = config.topology;
  const std::size_t M = topo.groups(), T = topo.iterations_per_round, L = topo.selected;
  const std::size_t total = T * topo.rounds;

  std::vector<double> div_sum(M, 0.0);
  double round_select = 0.0;
  std::vector<GroupSelection> chosen(M);
  std::vector<std::pair<std::size_t, ModelParams>> trained(M * L);

  for (std::size_t t = 1; t <= total; ++t) {
    if (!run.eligible(1, t)) break;

    parallel_for(M, config.workers, [&](std::size_t m) {
      Rng rng = Rng::derive(config.seed, StreamTag::Selection, {t, m});
      chosen[m] = select_group(run.fed.groups[m], run.p_real, topo, config.sampler, rng,
                               config.batch_policy, 1);
    });

    parallel_for(M * L, config.workers, [&](std::size_t i) {
      const std::size_t m = i / L;
      DeviceStream& stream = run.fed.groups[m][chosen[m].devices[i % L]];
      const Batch batch = stream.fetch_batch();
      trained[i] = {batch.size(), local_step(run.group_models[m], batch, topo.learning_rate)};
    });

    for (std::size_t m = 0; m < M; ++m) {
      run.group_models[m] = internal_sync(std::span(trained).subspan(m * L, L));
      run.result.consumed[m] += L;
      div_sum[m] += chosen[m].divergence;
      run.result.selection_seconds += chosen[m].seconds;
      round_select += chosen[m].seconds;
    }
    run.result.iterations = t;

    if (t % T == 0) {
      std::vector<double> mean(M);
      for (std::size_t m = 0; m < M; ++m) mean[m] = div_sum[m] / static_cast<double>(T);
      run.close_round(t / T, std::move(mean), round_select, M * T, true);
      std::fill(div_sum.begin(), div_sum.end(), 0.0);
      round_select = 0.0;
    }
  }
  return std::move(run.result);
}

SimResult run_fedavg(const SimConfig& config) {
  return run_fedavg(config, load_federation(config));
}

SimResult run_fedavg(const SimConfig& config, Federation federation,
                     std::optional<ModelParams> start) {
  Run run(config, std::move(federation), std::move(start));
  const FederationTopology& topo = config.topology;
  const std::size_t M = topo.groups(), T = topo.iterations_per_round;
  SamplerSpec uniform;
  uniform.kind = SamplerKind::Random;

  for (std::size_t r = 1; r <= topo.rounds; ++r) {
    const std::size_t first = (r - 1) * T + 1;
    if (!run.eligible(T, first)) break;

    std::vector<GroupSelection> chosen(M);
    std::vector<double> div(M, 0.0);
    parallel_for(M, config.workers, [&](std::size_t m) {
      // Same stream as the first iteration of the round in run_fedgs, so the
      // two protocols pick identical devices when T = 1.
      Rng rng = Rng::derive(config.seed, StreamTag::Selection, {first, m});
      chosen[m] = select_group(run.fed.groups[m], run.p_real, topo, uniform, rng,
                               config.batch_policy, T);
      const auto& devices = chosen[m].devices;
      std::vector<std::vector<Batch>> batches(devices.size());
      for (std::size_t j = 0; j < devices.size(); ++j) {
        for (std::size_t s = 0; s < T; ++s) batches[j].push_back(run.fed.groups[m][devices[j]].fetch_batch());
      }
      double sum = 0.0;
      for (std::size_t s = 0; s < T; ++s) {
        std::vector<ClassCounts> step;
        for (const auto& b : batches) step.push_back(histogram(b[s].labels, topo.classes));
        sum += divergence_probe(step, run.p_real);
      }
      div[m] = sum / static_cast<double>(T);
      run.group_models[m] = fedavg_round(run.group_models[m], batches, topo.learning_rate, 1);
    });

    double round_select = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      run.result.consumed[m] += T * topo.selected;
      run.result.selection_seconds += chosen[m].seconds;
      round_select += chosen[m].seconds;
    }
    run.result.iterations = r * T;
    run.close_round(r, std::move(div), round_select, M, false);
  }
  return std::move(run.result);
}

std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> metrics, double target) {
  for (const RoundMetrics& m : metrics) {
    if (m.accuracy >= target) return m.round;
  }
  return std::nullopt;
}

nlohmann::json to_json(const RoundMetrics& m, bool timing) {
  nlohmann::json doc = {{"round", m.round},
                        {"accuracy", m.accuracy},
                        {"loss", m.loss},
                        {"divergence", m.divergence}};
  if (timing) doc["selection_seconds"] = m.selection_seconds;
  if (m.simulated_seconds) doc["simulated_seconds"] = *m.simulated_seconds;
  return doc;
}

void write_metrics_jsonl(std::ostream& out, std::span<const RoundMetrics> metrics, bool timing) {
  for (const RoundMetrics& m : metrics) out << to_json(m, timing).dump() << '\n';
}

void write_summary_csv(std::ostream& out, std::string_view protocol, const SimResult& result,
                       double target_accuracy, bool timing) {
  out << "protocol,status,rounds,final_accuracy,final_loss,rounds_to_target,target_accuracy,"
         "selection_seconds\n";
  const auto precision = out.precision(17);
  out << protocol << ',' << to_string(result.status) << ',' << result.metrics.size() << ',';
  if (!result.metrics.empty()) {
    out << result.metrics.back().accuracy << ',' << result.metrics.back().loss;
  } else {
    out << ',';
  }
  out << ',';
  if (auto r = rounds_to_target(result.metrics, target_accuracy)) out << *r;
  out << ',' << target_accuracy << ',' << (timing ? result.selection_seconds : 0.0) << '\n';
  out.precision(precision);
}

}  // namespace fedgs
