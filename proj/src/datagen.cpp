#include "fedgs/datagen.hpp"
#include "json_util.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <string>

namespace fedgs {

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, what);
}

[[noreturn]] void malformed(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::MalformedManifest, where + ": " + what);
}

std::vector<int> draw_labels(Rng& rng, const ClassDistribution& dist, std::size_t count) {
  const std::vector<double> weights(dist.probs().begin(), dist.probs().end());
  std::vector<int> labels(count);
  for (int& y : labels) y = static_cast<int>(sample_categorical(rng, weights));
  return labels;
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) invalid("classes must be >= 2");
  if (feature_dim < 1) invalid("feature_dim must be >= 1");
  if (devices_per_group < 1) invalid("devices_per_group must be >= 1");
  if (groups < 1) invalid("groups must be >= 1");
  if (batches_per_device < 1) invalid("batches_per_device must be >= 1");
  if (batch_size < 1) invalid("batch_size must be >= 1");
  if (!(concentration > 0.0) || !std::isfinite(concentration)) invalid("concentration must be > 0");
  if (!(separation > 0.0)) invalid("separation must be > 0");
  if (!(noise > 0.0)) invalid("noise must be > 0");
  if (test_size < 1) invalid("test_size must be >= 1");
}

SynthConfig synth_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) invalid("synthetic data config must be a JSON object");
  SynthConfig c;
  auto count = [&](const char* key, std::size_t& out) {
    if (!doc.contains(key)) invalid(std::string("missing required field '") + key + "'");
    if (!is_count(doc[key])) {
      invalid(std::string("field '") + key + "' must be a non-negative integer");
    }
    out = doc[key].get<std::size_t>();
  };
  auto real = [&](const char* key, double& out, bool required) {
    if (!doc.contains(key)) {
      if (required) invalid(std::string("missing required field '") + key + "'");
      return;
    }
    if (!doc[key].is_number()) invalid(std::string("field '") + key + "' must be a number");
    out = doc[key].get<double>();
  };
  count("classes", c.classes);
  count("feature_dim", c.feature_dim);
  count("devices_per_group", c.devices_per_group);
  count("groups", c.groups);
  count("batches_per_device", c.batches_per_device);
  count("batch_size", c.batch_size);
  real("concentration", c.concentration, true);
  real("separation", c.separation, false);
  real("noise", c.noise, false);
  if (doc.contains("test_size")) count("test_size", c.test_size);
  if (doc.contains("seed")) {
    if (!is_count(doc["seed"])) invalid("field 'seed' must be a non-negative integer");
    c.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("regenerate")) {
    if (!doc["regenerate"].is_boolean()) invalid("field 'regenerate' must be a boolean");
    c.regenerate = doc["regenerate"].get<bool>();
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"classes", c.classes},
          {"feature_dim", c.feature_dim},
          {"devices_per_group", c.devices_per_group},
          {"groups", c.groups},
          {"batches_per_device", c.batches_per_device},
          {"batch_size", c.batch_size},
          {"concentration", c.concentration},
          {"separation", c.separation},
          {"noise", c.noise},
          {"test_size", c.test_size},
          {"seed", c.seed},
          {"regenerate", c.regenerate}};
}

FeatureSource::FeatureSource(const SynthConfig& config) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(config_.seed, StreamTag::ClassMeans);
  // Entries ~ N(0, sep^2 / (2d)) so the expected squared distance between two
  // class means is sep^2.
  const double scale =
      config_.separation / std::sqrt(2.0 * static_cast<double>(config_.feature_dim));
  means_.resize(static_cast<Eigen::Index>(config_.classes),
                static_cast<Eigen::Index>(config_.feature_dim));
  for (Eigen::Index c = 0; c < means_.rows(); ++c) {
    for (Eigen::Index j = 0; j < means_.cols(); ++j) means_(c, j) = scale * rng.normal();
  }
}

Matrix FeatureSource::features(const std::vector<int>& labels, Rng& rng) const {
  Matrix x(static_cast<Eigen::Index>(labels.size()), means_.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      x(row, j) = means_(labels[i], j) + config_.noise * rng.normal();
    }
  }
  return x;
}

DeviceStream::DeviceStream(std::size_t classes, std::deque<Batch> batches,
                           const std::vector<int>& all_labels)
    : classes_(classes),
      source_dist_(normalize(histogram(all_labels, classes))),
      label_totals_(histogram(all_labels, classes)) {
  for (Batch& b : batches) {
    Pending p;
    p.labels = std::move(b.labels);
    p.features = std::move(b.features);
    p.index = queue_.size();
    queue_.push_back(std::move(p));
  }
}

DeviceStream::DeviceStream(std::shared_ptr<const FeatureSource> source,
                           std::size_t group, std::size_t device,
                           ClassDistribution source_distribution)
    : classes_(source->config().classes),
      source_(std::move(source)),
      group_(group),
      device_(device),
      source_dist_(std::move(source_distribution)),
      label_totals_(classes_) {
  draw_pass(0);
  for (const Pending& p : queue_) label_totals_ += histogram(p.labels, classes_);
}

void DeviceStream::draw_pass(std::uint64_t pass) {
  const SynthConfig& c = source_->config();
  Rng rng = Rng::derive(c.seed, StreamTag::BatchLabels, {group_, device_, pass});
  for (std::size_t b = 0; b < c.batches_per_device; ++b) {
    Pending p;
    p.labels = draw_labels(rng, source_dist_, c.batch_size);
    p.pass = pass;
    p.index = b;
    queue_.push_back(std::move(p));
  }
}

Matrix DeviceStream::materialize(const Pending& p) const {
  if (p.features) return *p.features;
  Rng rng = Rng::derive(source_->config().seed, StreamTag::BatchFeatures,
                        {group_, device_, p.pass, p.index});
  return source_->features(p.labels, rng);
}

ClassCounts DeviceStream::peek_next_histogram() const {
  if (queue_.empty()) throw Error(ErrorCode::StreamExhausted, "device stream is empty");
  return histogram(queue_.front().labels, classes_);
}

Batch DeviceStream::fetch_batch() {
  if (queue_.empty()) throw Error(ErrorCode::StreamExhausted, "device stream is empty");
  Batch out;
  out.features = materialize(queue_.front());
  out.labels = std::move(queue_.front().labels);
  queue_.pop_front();
  ++fetched_;
  if (queue_.empty() && source_ && source_->config().regenerate) draw_pass(++pass_);
  return out;
}

bool DeviceStream::can_supply(std::size_t count) const noexcept {
  if (source_ && source_->config().regenerate) return true;
  return queue_.size() >= count;
}

std::vector<Batch> DeviceStream::snapshot() const {
  std::vector<Batch> out;
  out.reserve(queue_.size());
  for (const Pending& p : queue_) out.push_back({materialize(p), p.labels});
  return out;
}

std::size_t Federation::device_count() const noexcept {
  std::size_t total = 0;
  for (const auto& g : groups) total += g.size();
  return total;
}

ClassDistribution Federation::global_distribution() const {
  std::vector<std::pair<std::int64_t, ClassDistribution>> devices;
  for (const auto& g : groups) {
    for (const DeviceStream& s : g) devices.emplace_back(s.data_size(), s.local_distribution());
  }
  return estimate_global_distribution(devices);
}

Federation generate_federation(const SynthConfig& config) {
  config.validate();
  auto source = std::make_shared<const FeatureSource>(config);
  Federation fed;
  fed.classes = config.classes;
  fed.feature_dim = config.feature_dim;
  fed.batch_size = config.batch_size;
  const std::vector<double> alpha(config.classes, config.concentration);
  fed.groups.resize(config.groups);
  for (std::size_t m = 0; m < config.groups; ++m) {
    fed.groups[m].reserve(config.devices_per_group);
    for (std::size_t k = 0; k < config.devices_per_group; ++k) {
      Rng rng = Rng::derive(config.seed, StreamTag::DeviceDistribution, {m, k});
      fed.groups[m].emplace_back(source, m, k, ClassDistribution(sample_dirichlet(rng, alpha)));
    }
  }
  const ClassDistribution p_global = fed.global_distribution();
  Rng rng = Rng::derive(config.seed, StreamTag::TestSet);
  fed.test.labels = draw_labels(rng, p_global, config.test_size);
  fed.test.features = source->features(fed.test.labels, rng);
  return fed;
}

namespace {

void read_samples(const nlohmann::json& samples, const std::string& where,
                  std::size_t classes, std::size_t dim, Matrix& x, std::vector<int>& y) {
  if (!samples.is_array()) malformed(where, "must be an array of samples");
  x.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
  y.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const auto& s = samples[i];
    if (!s.is_object() || !s.contains("x") || !s.contains("y")) {
      malformed(at, "sample needs fields 'x' and 'y'");
    }
    if (!s["y"].is_number_integer()) malformed(at + ".y", "label must be an integer");
    const long long label = s["y"].get<long long>();
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      malformed(at + ".y", "label " + std::to_string(label) + " outside [0, " +
                               std::to_string(classes) + ")");
    }
    y[i] = static_cast<int>(label);
    const auto& xs = s["x"];
    if (!xs.is_array() || xs.size() != dim) {
      malformed(at + ".x", "expected " + std::to_string(dim) + " features");
    }
    for (std::size_t j = 0; j < dim; ++j) {
      if (!xs[j].is_number()) malformed(at + ".x[" + std::to_string(j) + "]", "not a number");
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[j].get<double>();
    }
  }
}

nlohmann::json samples_to_json(const Matrix& x, const std::vector<int>& y) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < y.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < x.cols(); ++j) row.push_back(x(static_cast<Eigen::Index>(i), j));
    out.push_back({{"x", std::move(row)}, {"y", y[i]}});
  }
  return out;
}

}  // namespace

Federation parse_manifest(const nlohmann::json& doc) {
  if (!doc.is_object()) malformed("$", "manifest must be a JSON object");
  auto positive = [&](const char* key) {
    if (!doc.contains(key) || !is_count(doc[key]) || doc[key].get<std::size_t>() == 0) {
      malformed(std::string("$.") + key, "must be a positive integer");
    }
    return doc[key].get<std::size_t>();
  };
  Federation fed;
  fed.classes = positive("F");
  fed.feature_dim = positive("d");
  fed.batch_size = positive("n");
  if (!doc.contains("devices") || !doc["devices"].is_array() || doc["devices"].empty()) {
    malformed("$.devices", "must be a non-empty array");
  }

  std::map<std::size_t, std::vector<DeviceStream>> by_group;
  const auto& devices = doc["devices"];
  for (std::size_t i = 0; i < devices.size(); ++i) {
    const std::string at = "$.devices[" + std::to_string(i) + "]";
    const auto& dev = devices[i];
    if (!dev.is_object()) malformed(at, "must be an object");
    if (!dev.contains("group") || !is_count(dev["group"])) {
      malformed(at + ".group", "must be a non-negative integer");
    }
    if (!dev.contains("device") || !is_count(dev["device"])) {
      malformed(at + ".device", "must be a non-negative integer");
    }
    if (!dev.contains("samples")) malformed(at + ".samples", "missing");
    Matrix x;
    std::vector<int> y;
    read_samples(dev["samples"], at + ".samples", fed.classes, fed.feature_dim, x, y);
    if (y.empty()) malformed(at + ".samples", "device holds no samples");
    std::deque<Batch> batches;
    const std::size_t n = fed.batch_size;
    for (std::size_t start = 0; start + n <= y.size(); start += n) {
      Batch b;
      b.features = x.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
      b.labels.assign(y.begin() + static_cast<std::ptrdiff_t>(start),
                      y.begin() + static_cast<std::ptrdiff_t>(start + n));
      batches.push_back(std::move(b));
    }
    by_group[dev["group"].get<std::size_t>()].emplace_back(fed.classes, std::move(batches), y);
  }
  std::size_t expected = 0;
  for (auto& [id, streams] : by_group) {
    if (id != expected++) {
      malformed("$.devices", "group ids must be contiguous from 0 (missing group " +
                                 std::to_string(expected - 1) + ")");
    }
    fed.groups.push_back(std::move(streams));
  }

  if (!doc.contains("test")) malformed("$.test", "missing");
  read_samples(doc["test"], "$.test", fed.classes, fed.feature_dim, fed.test.features,
               fed.test.labels);
  return fed;
}

Federation load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedManifest,
                path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return parse_manifest(doc);
}

nlohmann::json manifest_to_json(const Federation& fed) {
  nlohmann::json devices = nlohmann::json::array();
  for (std::size_t m = 0; m < fed.groups.size(); ++m) {
    for (std::size_t k = 0; k < fed.groups[m].size(); ++k) {
      const std::vector<Batch> batches = fed.groups[m][k].snapshot();
      const Batch all = concatenate(batches);
      devices.push_back({{"group", m}, {"device", k}, {"samples", samples_to_json(all.features, all.labels)}});
    }
  }
  return {{"F", fed.classes},
          {"d", fed.feature_dim},
          {"n", fed.batch_size},
          {"devices", std::move(devices)},
          {"test", samples_to_json(fed.test.features, fed.test.labels)}};
}

void export_manifest(const Federation& fed, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  out << manifest_to_json(fed).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace fedgs
