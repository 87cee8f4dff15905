#include "fedgs/learn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "fedgs/parallel.hpp"
#include "json.hpp"

namespace fedgs {

namespace {

struct Layer {
  std::size_t in;
  std::size_t out;
  std::size_t offset;  // start of W; b follows at offset + in * out
};

std::vector<Layer> layers_of(const ModelSpec& spec) {
  std::vector<Layer> layers;
  std::size_t in = spec.input_dim;
  std::size_t offset = 0;
  auto push = [&](std::size_t out) {
    layers.push_back({in, out, offset});
    offset += in * out + out;
    in = out;
  };
  for (std::size_t h : spec.hidden) push(h);
  push(spec.classes);
  return layers;
}

using ConstWeights = Eigen::Map<const Matrix>;
using Weights = Eigen::Map<Matrix>;

ConstWeights weights(const Eigen::VectorXd& v, const Layer& l) {
  return ConstWeights(v.data() + l.offset, static_cast<Eigen::Index>(l.out),
                      static_cast<Eigen::Index>(l.in));
}

Eigen::Map<const Eigen::RowVectorXd> bias(const Eigen::VectorXd& v, const Layer& l) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data() + l.offset + l.in * l.out,
                                              static_cast<Eigen::Index>(l.out));
}

void check_batch(const ModelParams& params, const Batch& batch) {
  params.validate();
  if (static_cast<std::size_t>(batch.features.rows()) != batch.labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "feature rows != label count");
  }
  if (static_cast<std::size_t>(batch.features.cols()) != params.spec.input_dim) {
    throw Error(ErrorCode::ShapeMismatch,
                "batch has " + std::to_string(batch.features.cols()) +
                    " features, model expects " + std::to_string(params.spec.input_dim));
  }
  for (int y : batch.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= params.spec.classes) {
      throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(y) + " out of range");
    }
  }
}

// Forward pass; activations[0] is the input, activations.back() the logits.
std::vector<Matrix> forward(const ModelParams& params, const Matrix& input) {
  const auto layers = layers_of(params.spec);
  std::vector<Matrix> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(input);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = acts.back() * weights(params.values, layers[l]).transpose();
    z.rowwise() += bias(params.values, layers[l]);
    if (l + 1 < layers.size()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Per-row log-sum-exp of the logits.
Eigen::VectorXd log_sum_exp(const Matrix& logits) {
  const Eigen::VectorXd peak = logits.rowwise().maxCoeff();
  Eigen::VectorXd out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out(i) = peak(i) + std::log((logits.row(i).array() - peak(i)).exp().sum());
  }
  return out;
}

}  // namespace

void ModelSpec::validate() const {
  if (input_dim < 1) throw Error(ErrorCode::ShapeMismatch, "input_dim must be >= 1");
  if (classes < 2) throw Error(ErrorCode::ShapeMismatch, "classes must be >= 2");
  for (std::size_t h : hidden) {
    if (h < 1) throw Error(ErrorCode::ShapeMismatch, "hidden layers must be non-empty");
  }
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t total = 0;
  for (const Layer& l : layers_of(*this)) total += l.in * l.out + l.out;
  return total;
}

ModelParams ModelParams::zeros(const ModelSpec& spec) {
  spec.validate();
  return {spec, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.parameter_count()))};
}

ModelParams ModelParams::initialize(const ModelSpec& spec, Rng& rng) {
  ModelParams p = zeros(spec);
  for (const Layer& l : layers_of(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.in * l.out + l.out; ++i) {
      p.values(static_cast<Eigen::Index>(l.offset + i)) = bound * (2.0 * rng.uniform() - 1.0);
    }
  }
  return p;
}

void ModelParams::validate() const {
  spec.validate();
  if (static_cast<std::size_t>(values.size()) != spec.parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch,
                "parameter vector holds " + std::to_string(values.size()) +
                    " values, spec needs " + std::to_string(spec.parameter_count()));
  }
  if (!values.allFinite()) throw Error(ErrorCode::ShapeMismatch, "non-finite parameters");
}

Batch concatenate(std::span<const Batch> batches) {
  if (batches.empty()) return {};
  Eigen::Index rows = 0;
  for (const Batch& b : batches) rows += b.features.rows();
  Batch out;
  out.features.resize(rows, batches.front().features.cols());
  Eigen::Index at = 0;
  for (const Batch& b : batches) {
    if (b.features.cols() != out.features.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "batches differ in feature dimension");
    }
    out.features.middleRows(at, b.features.rows()) = b.features;
    at += b.features.rows();
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  }
  return out;
}

LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch) {
  check_batch(params, batch);
  const auto layers = layers_of(params.spec);
  const std::vector<Matrix> acts = forward(params, batch.features);
  const Matrix& logits = acts.back();
  const Eigen::VectorXd lse = log_sum_exp(logits);

  LossAndGrad out;
  out.grad = Eigen::VectorXd::Zero(params.values.size());
  // delta = softmax - onehot
  Matrix delta(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    out.loss += lse(i) - logits(i, y);
    delta.row(i) = (logits.row(i).array() - lse(i)).exp();
    delta(i, y) -= 1.0;
  }
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    Weights gw(out.grad.data() + layer.offset, static_cast<Eigen::Index>(layer.out),
               static_cast<Eigen::Index>(layer.in));
    gw.noalias() = delta.transpose() * acts[l];
    Eigen::Map<Eigen::RowVectorXd>(out.grad.data() + layer.offset + layer.in * layer.out,
                                   static_cast<Eigen::Index>(layer.out)) =
        delta.colwise().sum();
    if (l > 0) {
      Matrix upstream = delta * weights(params.values, layer);
      delta = upstream.array() * (1.0 - acts[l].array().square());
    }
  }
  return out;
}

ModelParams local_step(const ModelParams& params, const Batch& batch, double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw Error(ErrorCode::InvalidParams, "learning rate must be finite and >= 0");
  }
  if (batch.size() == 0) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  const LossAndGrad lg = loss_and_grad(params, batch);
  ModelParams next = params;
  next.values -= (eta / static_cast<double>(batch.size())) * lg.grad;
  return next;
}

ModelParams internal_sync(std::span<const std::pair<std::size_t, ModelParams>> models) {
  if (models.empty()) throw Error(ErrorCode::EmptySet, "no models to aggregate");
  const ModelSpec& spec = models.front().second.spec;
  std::size_t total = 0;
  for (const auto& [n, m] : models) {
    if (!(m.spec == spec) || m.values.size() != models.front().second.values.size()) {
      throw Error(ErrorCode::ShapeMismatch, "models differ in shape");
    }
    total += n;
  }
  if (total == 0) throw Error(ErrorCode::EmptySet, "aggregate data size is zero");
  ModelParams out = ModelParams::zeros(spec);
  for (const auto& [n, m] : models) {
    out.values += (static_cast<double>(n) / static_cast<double>(total)) * m.values;
  }
  return out;
}

ModelParams external_sync(std::span<const ModelParams> models) {
  if (models.empty()) throw Error(ErrorCode::EmptySet, "no models to aggregate");
  const ModelSpec& spec = models.front().spec;
  ModelParams out = ModelParams::zeros(spec);
  for (const ModelParams& m : models) {
    if (!(m.spec == spec) || m.values.size() != out.values.size()) {
      throw Error(ErrorCode::ShapeMismatch, "models differ in shape");
    }
    out.values += m.values;
  }
  out.values /= static_cast<double>(models.size());
  return out;
}

Evaluation evaluate(const ModelParams& params, const Batch& test) {
  if (test.size() == 0) throw Error(ErrorCode::ShapeMismatch, "empty test batch");
  check_batch(params, test);
  const Matrix logits = forward(params, test.features).back();
  const Eigen::VectorXd lse = log_sum_exp(logits);
  std::size_t correct = 0;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    const int y = test.labels[static_cast<std::size_t>(i)];
    if (best == y) ++correct;
    loss += lse(i) - logits(i, y);
  }
  const auto n = static_cast<double>(test.size());
  return {static_cast<double>(correct) / n, loss / n};
}

ModelParams fedavg_round(const ModelParams& global,
                         std::span<const std::vector<Batch>> device_batches,
                         double eta, std::size_t workers) {
  if (device_batches.empty()) throw Error(ErrorCode::EmptySet, "no devices selected");
  std::vector<std::pair<std::size_t, ModelParams>> trained(device_batches.size());
  parallel_for(device_batches.size(), workers, [&](std::size_t k) {
    const auto& batches = device_batches[k];
    if (batches.empty()) throw Error(ErrorCode::InvalidParams, "T must be >= 1");
    ModelParams local = global;
    std::size_t used = 0;
    for (const Batch& b : batches) {
      local = local_step(local, b, eta);
      used += b.size();
    }
    trained[k] = {used, std::move(local)};
  });
  return internal_sync(trained);
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  params.validate();
  const nlohmann::json header = {{"format", "fedgs-checkpoint"},
                                 {"version", 1},
                                 {"input_dim", params.spec.input_dim},
                                 {"classes", params.spec.classes},
                                 {"hidden", params.spec.hidden},
                                 {"count", params.values.size()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  out << header.dump() << '\n';
  for (Eigen::Index i = 0; i < params.values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(params.values(i));
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  ModelSpec spec;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "fedgs-checkpoint") {
      throw Error(ErrorCode::IoError, "not a checkpoint file");
    }
    spec.input_dim = header.at("input_dim").get<std::size_t>();
    spec.classes = header.at("classes").get<std::size_t>();
    spec.hidden = header.at("hidden").get<std::vector<std::size_t>>();
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, "bad checkpoint header: " + std::string(e.what()));
  }
  ModelParams params = ModelParams::zeros(spec);
  if (count != spec.parameter_count()) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint count disagrees with its shape");
  }
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
      throw Error(ErrorCode::IoError, "truncated checkpoint " + path.string());
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    params.values(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(bits);
  }
  params.validate();
  return params;
}

}  // namespace fedgs
