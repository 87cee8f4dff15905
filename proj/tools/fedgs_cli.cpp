// fedgs: data generation, simulation, sampler benchmarks and time-cost
// evaluation from the command line.
//
// Exit codes: 0 success, 1 runtime failure with a typed status, 2 usage or
// configuration error.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "fedgs/datagen.hpp"
#include "fedgs/samplers.hpp"
#include "fedgs/sim.hpp"
#include "fedgs/timecost.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedgs;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool is_config_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidParams:
    case ErrorCode::MalformedInstance:
    case ErrorCode::MalformedManifest:
      return true;
    default:
      return false;
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

// Git blob id of the canonical (sorted-key, compact) serialization, so the
// hash ignores key order and whitespace in the source file.
std::string config_hash(const json& config) {
  const std::string body = config.dump();
  const std::string blob = "blob " + std::to_string(body.size()) + '\0' + body;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &length, EVP_sha1(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-1 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// FEDGS_SEED wins over the config file; a --seed flag wins over both.
std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("FEDGS_SEED");
  if (!raw || !*raw) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(raw, &used);
    if (used != std::string(raw).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("FEDGS_SEED is not an unsigned integer: ") + raw);
  }
}

void write_run_manifest(const fs::path& path, const std::string& command, const json& config,
                        const json& overrides) {
  json manifest = {{"tool", "fedgs"},
                   {"version", FEDGS_VERSION},
                   {"command", command},
                   {"started", utc_now()},
                   {"config", config},
                   {"config_hash", config_hash(config)},
                   {"overrides", overrides}};
  auto out = open_out(path);
  out << manifest.dump(2) << '\n';
}

// Applies the seed override chain to a config document and records it.
void apply_seed(json& doc, json& overrides, std::optional<std::uint64_t> flag) {
  if (auto env = env_seed()) {
    doc["seed"] = *env;
    overrides["seed"] = {{"value", *env}, {"source", "FEDGS_SEED"}};
  }
  if (flag) {
    doc["seed"] = *flag;
    overrides["seed"] = {{"value", *flag}, {"source", "flag"}};
  }
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a) {
  json doc = read_json(a.config);
  if (!doc.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  json overrides = json::object();
  apply_seed(doc, overrides, a.seed);
  const SynthConfig config = synth_config_from_json(doc);
  const fs::path out = a.out;
  write_run_manifest(fs::path(out.string() + ".run.json"), "gen-data", to_json(config), overrides);

  const Federation fed = generate_federation(config);
  export_manifest(fed, out);

  const ClassDistribution global = fed.global_distribution();
  std::vector<double> all;
  std::cout << "group,device,samples,divergence\n" << std::setprecision(6);
  for (std::size_t m = 0; m < fed.groups.size(); ++m) {
    for (std::size_t k = 0; k < fed.groups[m].size(); ++k) {
      const DeviceStream& s = fed.groups[m][k];
      const double d = divergence(s.local_distribution(), global);
      all.push_back(d);
      std::cout << m << ',' << k << ',' << s.data_size() << ',' << d << '\n';
    }
  }
  std::sort(all.begin(), all.end());
  std::cerr << "devices=" << all.size() << " divergence min=" << all.front()
            << " median=" << all[all.size() / 2] << " max=" << all.back() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config;
  std::string protocol = "fedgs";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> rounds;
  std::optional<std::string> sampler;
  std::optional<std::string> initializer;
  std::optional<double> target;
  std::string init_checkpoint;
  bool timing = false;
  bool dry_run = false;
};

int cmd_simulate(const SimulateArgs& a) {
  if (a.protocol != "fedgs" && a.protocol != "fedavg") {
    throw UsageError("--protocol must be fedgs or fedavg");
  }
  json doc = read_json(a.config);
  if (!doc.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  json overrides = json::object();
  apply_seed(doc, overrides, a.seed);
  auto set = [&](const char* key, const json& value) {
    doc[key] = value;
    overrides[key] = {{"value", value}, {"source", "flag"}};
  };
  if (a.workers) set("workers", *a.workers);
  if (a.sampler) set("sampler", *a.sampler);
  if (a.initializer) set("initializer", *a.initializer);
  if (a.target) set("target_accuracy", *a.target);
  if (a.rounds) {
    if (doc.contains("topology") && doc["topology"].is_object()) doc["topology"]["rounds"] = *a.rounds;
    overrides["rounds"] = {{"value", *a.rounds}, {"source", "flag"}};
  }

  const SimConfig config = sim_config_from_json(doc, fs::path(a.config).parent_path());
  const fs::path out = a.out;
  fs::create_directories(out);
  json resolved = to_json(config);
  resolved["protocol"] = a.protocol;
  write_run_manifest(out / "run.json", "simulate", resolved, overrides);
  if (a.dry_run) return kOk;

  Federation fed = load_federation(config);
  std::optional<ModelParams> start;
  if (!a.init_checkpoint.empty()) start = read_checkpoint(a.init_checkpoint);
  const SimResult result = a.protocol == "fedgs" ? run_fedgs(config, std::move(fed), start)
                                                 : run_fedavg(config, std::move(fed), start);

  {
    auto metrics = open_out(out / "metrics.jsonl");
    write_metrics_jsonl(metrics, result.metrics, a.timing);
  }
  {
    auto summary = open_out(out / "summary.csv");
    write_summary_csv(summary, a.protocol, result, config.target_accuracy, a.timing);
  }
  write_checkpoint(out / "model.ckpt", result.model);

  if (!result.metrics.empty()) {
    const RoundMetrics& last = result.metrics.back();
    std::cerr << a.protocol << ": " << result.metrics.size() << " rounds, accuracy "
              << last.accuracy << ", loss " << last.loss << '\n';
  }
  if (result.status != SimStatus::Completed) {
    std::cerr << "error: " << to_string(ErrorCode::InsufficientEligibleDevices) << ": "
              << result.message << '\n';
    return kRuntime;
  }
  return kOk;
}

// ------------------------------------------------------------ select-bench

struct BenchArgs {
  std::size_t fuzz = 0;
  std::string instances;
  std::string samplers = "gbp-cs,random,mc,ga";
  std::string out;
  std::string traces;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::optional<std::uint64_t> brute_cap;
  bool no_timing = false;
  FuzzSpec fuzz_spec;
};

std::vector<SamplerSpec> parse_sampler_list(const std::string& list, std::optional<std::uint64_t> cap) {
  std::vector<SamplerSpec> out;
  std::stringstream in(list);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty()) continue;
    try {
      out.push_back(parse_sampler(name));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (cap) out.back().brute_cap = *cap;
  }
  if (out.empty()) throw UsageError("--samplers is empty");
  return out;
}

void write_traces(std::ostream& out, const std::vector<SelectionProblem>& problems,
                  std::uint64_t seed, bool timing) {
  out << "instance_id,initializer,step,objective,divergence,elapsed_ms\n";
  out << std::setprecision(17);
  const Initializer inits[] = {Initializer::MPInv, Initializer::Zero, Initializer::Random};
  for (std::size_t p = 0; p < problems.size(); ++p) {
    for (std::size_t i = 0; i < std::size(inits); ++i) {
      Rng rng = Rng::derive(seed, StreamTag::Sampler, {p, 1000 + i});
      GbpOptions options;
      options.initializer = inits[i];
      const GbpResult r = gbp_cs(problems[p], options, rng);
      auto row = [&](std::size_t step, double d, Seconds t) {
        out << p << ',' << to_string(inits[i]) << ',' << step << ',' << d << ','
            << problems[p].divergence_of(d) << ',' << (timing ? t.count() * 1e3 : 0.0) << '\n';
      };
      row(0, r.trace.initial_distance, r.trace.init_elapsed);
      for (std::size_t s = 0; s < r.trace.steps.size(); ++s) {
        row(s + 1, r.trace.steps[s].distance, r.trace.steps[s].elapsed);
      }
    }
  }
}

int cmd_select_bench(const BenchArgs& a) {
  if ((a.fuzz > 0) == !a.instances.empty()) {
    throw UsageError("give exactly one of --fuzz N or --instances FILE");
  }
  const std::vector<SamplerSpec> samplers = parse_sampler_list(a.samplers, a.brute_cap);
  json overrides = json::object();
  json seeded = {{"seed", 0}};
  apply_seed(seeded, overrides, a.seed);
  const std::uint64_t seed = seeded["seed"].get<std::uint64_t>();

  json config = {{"seed", seed}, {"workers", a.workers}, {"timing", !a.no_timing}};
  json names = json::array();
  for (const auto& s : samplers) names.push_back(s.name());
  config["samplers"] = names;
  if (a.fuzz > 0) {
    const FuzzSpec& f = a.fuzz_spec;
    config["fuzz"] = {{"count", a.fuzz},
                      {"classes", f.classes},
                      {"candidates", f.candidates},
                      {"presampled", f.presampled},
                      {"cardinality", f.cardinality},
                      {"batch_size", f.batch_size},
                      {"groups", f.groups},
                      {"concentration", f.concentration}};
  } else {
    config["instances"] = a.instances;
  }
  const fs::path out = a.out;
  write_run_manifest(fs::path(out.string() + ".run.json"), "select-bench", config, overrides);

  std::vector<SelectionProblem> problems;
  if (a.fuzz > 0) {
    for (std::size_t i = 0; i < a.fuzz; ++i) {
      Rng rng = Rng::derive(seed, StreamTag::Fuzz, {i});
      problems.push_back(make_fuzz_problem(a.fuzz_spec, rng));
    }
  } else {
    json doc = read_json(a.instances);
    if (doc.is_object() && doc.contains("instances")) doc = doc["instances"];
    if (!doc.is_array()) throw Error(ErrorCode::MalformedInstance, "expected an array of instances");
    for (std::size_t i = 0; i < doc.size(); ++i) {
      try {
        problems.push_back(problem_from_json(doc[i]));
      } catch (const Error& e) {
        throw Error(e.code(), "instance " + std::to_string(i) + ": " + e.what());
      }
    }
  }

  const auto rows = bench_samplers(problems, samplers, seed, a.workers);
  {
    auto csv = open_out(out);
    write_bench_csv(csv, rows, !a.no_timing);
  }
  if (!a.traces.empty()) {
    auto csv = open_out(a.traces);
    write_traces(csv, problems, seed, !a.no_timing);
  }
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.error ? 1 : 0;
  std::cerr << problems.size() << " instances x " << samplers.size() << " samplers";
  if (failed) std::cerr << ", " << failed << " cells failed";
  std::cerr << '\n';
  return kOk;
}

// ---------------------------------------------------------------- timecost

int cmd_timecost(const std::string& params, bool simplified) {
  const CostParams p = cost_params_from_json(read_json(params));
  const CostReport r = cost_report(p, simplified ? CostMode::Simplified : CostMode::General);
  std::cout << to_json(r).dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical federated learning simulator with group-wise client selection"};
  app.set_version_flag("--version", FEDGS_VERSION);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic federation manifest");
  gen_cmd->add_option("config", gen.config, "Synthetic data config (JSON)")->required();
  gen_cmd->add_option("-o,--out", gen.out, "Manifest output path")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the config seed");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a FedGS or FedAvg simulation");
  sim_cmd->add_option("config", sim.config, "Simulation config (JSON)")->required();
  sim_cmd->add_option("--protocol", sim.protocol, "fedgs or fedavg")
      ->check(CLI::IsMember({"fedgs", "fedavg"}));
  sim_cmd->add_option("-o,--out", sim.out, "Output directory")->required();
  sim_cmd->add_option("--seed", sim.seed, "Override the master seed");
  sim_cmd->add_option("--workers", sim.workers, "Worker threads")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--rounds", sim.rounds, "Override the number of rounds");
  sim_cmd->add_option("--sampler", sim.sampler, "gbp-cs, random, mc, brute or ga");
  sim_cmd->add_option("--initializer", sim.initializer, "mpinv, zero or random");
  sim_cmd->add_option("--target-accuracy", sim.target, "Accuracy for the rounds-to-target column");
  sim_cmd->add_option("--init-checkpoint", sim.init_checkpoint, "Start from this checkpoint");
  sim_cmd->add_flag("--timing", sim.timing, "Write measured selection time to the metrics");
  sim_cmd->add_flag("--dry-run", sim.dry_run, "Resolve the config, write run.json and stop");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("select-bench", "Benchmark selection samplers");
  bench_cmd->add_option("--fuzz", bench.fuzz, "Number of generated instances");
  bench_cmd->add_option("--instances", bench.instances, "JSON array of problem instances");
  bench_cmd->add_option("--samplers", bench.samplers, "Comma-separated sampler names");
  bench_cmd->add_option("-o,--out", bench.out, "Benchmark CSV path")->required();
  bench_cmd->add_option("--traces", bench.traces, "Descent traces CSV (mpinv, zero, random)");
  bench_cmd->add_option("--seed", bench.seed, "Seed for instances and samplers");
  bench_cmd->add_option("--workers", bench.workers, "Worker threads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--brute-cap", bench.brute_cap, "Largest subset count brute may enumerate");
  bench_cmd->add_flag("--no-timing", bench.no_timing, "Write 0 for wall times");
  bench_cmd->add_option("--classes", bench.fuzz_spec.classes, "Fuzz: classes F");
  bench_cmd->add_option("--candidates", bench.fuzz_spec.candidates, "Fuzz: candidates alpha");
  bench_cmd->add_option("--presampled", bench.fuzz_spec.presampled, "Fuzz: pre-sampled devices");
  bench_cmd->add_option("--cardinality", bench.fuzz_spec.cardinality, "Fuzz: devices to select");
  bench_cmd->add_option("--batch-size", bench.fuzz_spec.batch_size, "Fuzz: batch size n");
  bench_cmd->add_option("--groups", bench.fuzz_spec.groups, "Fuzz: groups behind the target");
  bench_cmd->add_option("--concentration", bench.fuzz_spec.concentration, "Fuzz: Dirichlet concentration");

  std::string cost_params;
  bool simplified = false;
  auto* cost_cmd = app.add_subcommand("timecost", "Evaluate the time-cost model");
  cost_cmd->add_option("params", cost_params, "Cost parameters (JSON)")->required();
  cost_cmd->add_flag("--simplified", simplified, "Use the symmetric-link closed forms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*bench_cmd) return cmd_select_bench(bench);
    if (*cost_cmd) return cmd_timecost(cost_params, simplified);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_config_error(e.code()) ? kUsage : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
