#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "fedgs/learn.hpp"

using namespace fedgs;

namespace {

Batch random_batch(Rng& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(classes)));
  return b;
}

ModelParams scalar_params(std::vector<double> v) {
  ModelParams p;
  p.spec = {1, 2, {}};
  p.values = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return p;
}

double relative(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace

TEST(ModelSpec, ParameterCountAndValidation) {
  EXPECT_EQ((ModelSpec{4, 3, {}}).parameter_count(), 15u);
  EXPECT_EQ((ModelSpec{4, 3, {5}}).parameter_count(), 4u * 5 + 5 + 5 * 3 + 3);
  EXPECT_THROW((ModelSpec{0, 3, {}}).validate(), Error);
  EXPECT_THROW((ModelSpec{4, 1, {}}).validate(), Error);
  EXPECT_THROW((ModelSpec{4, 3, {0}}).validate(), Error);
}

TEST(ModelParams, InitializationBoundsAndDeterminism) {
  const ModelSpec spec{9, 4, {16}};
  Rng a(3), b(3);
  const auto p = ModelParams::initialize(spec, a);
  EXPECT_EQ(p.values, ModelParams::initialize(spec, b).values);
  // First layer fan-in 9, second fan-in 16.
  for (Eigen::Index i = 0; i < 9 * 16 + 16; ++i) EXPECT_LE(std::abs(p.values(i)), 1.0 / 3.0);
  for (Eigen::Index i = 9 * 16 + 16; i < p.values.size(); ++i) EXPECT_LE(std::abs(p.values(i)), 0.25);
  auto broken = p;
  broken.values(0) = NAN;
  EXPECT_THROW(broken.validate(), Error);
}

TEST(Loss, UniformLogitsGiveLogF) {
  Rng rng(1);
  const auto batch = random_batch(rng, 12, 5, 7);
  const auto lg = loss_and_grad(ModelParams::zeros({5, 7, {}}), batch);
  EXPECT_NEAR(lg.loss, 12 * std::log(7.0), 1e-12);
}

TEST(Loss, DuplicatedRowsDoubleLossAndGradient) {
  Rng rng(2);
  for (const ModelSpec& spec : {ModelSpec{6, 4, {}}, ModelSpec{6, 4, {8}}}) {
    const auto batch = random_batch(rng, 10, 6, 4);
    const std::vector<Batch> twice{batch, batch};
    auto p = ModelParams::initialize(spec, rng);
    const auto one = loss_and_grad(p, batch);
    const auto two = loss_and_grad(p, concatenate(twice));
    EXPECT_NEAR(two.loss, 2 * one.loss, 1e-12 * one.loss);
    EXPECT_LT(relative(two.grad, 2 * one.grad), 1e-13);
  }
}

TEST(Loss, ShapeAndFiniteness) {
  Rng rng(3);
  const auto p = ModelParams::zeros({5, 3, {}});
  EXPECT_THROW(loss_and_grad(p, random_batch(rng, 4, 6, 3)), Error);
  auto bad_label = random_batch(rng, 4, 5, 3);
  bad_label.labels[2] = 3;
  EXPECT_THROW(loss_and_grad(p, bad_label), Error);

  auto huge = p;
  huge.values.setConstant(1e200);
  auto batch = random_batch(rng, 4, 5, 3);
  batch.features.setConstant(1e200);
  try {
    loss_and_grad(huge, batch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
  }
}

TEST(Loss, GradientMatchesCentralDifferences) {
  const double h = 1e-5;
  Rng rng(4);
  for (const ModelSpec& spec : {ModelSpec{5, 4, {}}, ModelSpec{5, 4, {6}}}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = ModelParams::initialize(spec, rng);
      const auto batch = random_batch(rng, 8, 5, 4);
      const Eigen::VectorXd analytic = loss_and_grad(p, batch).grad;
      Eigen::VectorXd numeric(analytic.size());
      for (Eigen::Index i = 0; i < numeric.size(); ++i) {
        auto up = p, down = p;
        up.values(i) += h;
        down.values(i) -= h;
        numeric(i) = (loss_and_grad(up, batch).loss - loss_and_grad(down, batch).loss) / (2 * h);
      }
      EXPECT_LT(relative(analytic, numeric), 1e-5) << "hidden layers: " << spec.hidden.size();
    }
  }
}

TEST(LocalStep, ScalarToy) {
  // Softmax regression with d = 1, F = 2, a single sample x = 1, y = 0.
  // With W = [w0, w1] and b = [0, 0] the summed gradient for w0 is p0 - 1.
  ModelParams p = scalar_params({1.0, 1.0, 0.0, 0.0});
  Batch b;
  b.features = Matrix::Ones(1, 1);
  b.labels = {0};
  // Equal logits: p0 = 0.5, so dL/dw0 = -0.5 and w0 moves to 1 + 0.1 * 0.5.
  const auto next = local_step(p, b, 0.1);
  EXPECT_DOUBLE_EQ(next.values(0), 1.05);
  EXPECT_DOUBLE_EQ(next.values(1), 0.95);
}

TEST(LocalStep, FormulaZeroGradientAndLinearity) {
  Rng rng(5);
  const ModelSpec spec{4, 3, {5}};
  const auto p = ModelParams::initialize(spec, rng);
  const auto batch = random_batch(rng, 16, 4, 3);
  const auto grad = loss_and_grad(p, batch).grad;
  const auto next = local_step(p, batch, 0.3);
  EXPECT_LT(relative(next.values, p.values - (0.3 / 16) * grad), 1e-15);

  const Eigen::VectorXd full = p.values - local_step(p, batch, 0.2).values;
  const Eigen::VectorXd half = p.values - local_step(p, batch, 0.1).values;
  EXPECT_LT(relative(half, 0.5 * full), 1e-12);

  // Zero features and one sample per class leave softmax regression at a
  // stationary point when all parameters are zero.
  Batch balanced;
  balanced.features = Matrix::Zero(4, 2);
  balanced.labels = {0, 1, 2, 3};
  const auto zero = ModelParams::zeros({2, 4, {}});
  EXPECT_EQ(local_step(zero, balanced, 0.5).values, zero.values);
  EXPECT_EQ(local_step(p, batch, 0.0).values, p.values);
  EXPECT_THROW(local_step(p, batch, -0.1), Error);
}

TEST(Sync, InternalExamples) {
  using Item = std::pair<std::size_t, ModelParams>;
  std::vector<Item> equal{{4, scalar_params({1, 0, 0, 0})}, {4, scalar_params({3, 0, 0, 0})}};
  EXPECT_DOUBLE_EQ(internal_sync(equal).values(0), 2.0);
  std::vector<Item> weighted{{1, scalar_params({0, 0, 0, 0})}, {3, scalar_params({4, 0, 0, 0})}};
  EXPECT_DOUBLE_EQ(internal_sync(weighted).values(0), 3.0);
  std::vector<Item> single{{7, scalar_params({0.3, 0.1, -2, 5})}};
  EXPECT_EQ(internal_sync(single).values, single[0].second.values);
  std::vector<Item> none;
  try {
    internal_sync(none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySet);
  }
  ModelParams other = ModelParams::zeros({2, 2, {}});
  std::vector<Item> mixed{{1, scalar_params({0, 0, 0, 0})}, {1, other}};
  try {
    internal_sync(mixed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Sync, ExternalExamples) {
  std::vector<ModelParams> pair{scalar_params({0, 0, 0, 0}), scalar_params({2, 0, 0, 0})};
  EXPECT_DOUBLE_EQ(external_sync(pair).values(0), 1.0);
  std::vector<ModelParams> same(3, scalar_params({0.1, 0.2, 0.3, 0.4}));
  EXPECT_LT(relative(external_sync(same).values, same[0].values), 1e-15);
  EXPECT_THROW(external_sync(std::vector<ModelParams>{}), Error);
}

TEST(Sync, FixedOrderIsBitReproducibleAndPermutationStable) {
  Rng rng(6);
  const ModelSpec spec{6, 5, {}};
  std::vector<ModelParams> models;
  for (int i = 0; i < 7; ++i) models.push_back(ModelParams::initialize(spec, rng));
  const auto a = external_sync(models);
  EXPECT_EQ(a.values, external_sync(models).values);
  std::vector<ModelParams> reversed(models.rbegin(), models.rend());
  EXPECT_LT(relative(external_sync(reversed).values, a.values), 1e-14);
}

TEST(Sync, AggregationIsAffine) {
  Rng rng(7);
  const ModelSpec spec{3, 3, {4}};
  std::vector<std::pair<std::size_t, ModelParams>> items;
  std::vector<ModelParams> plain;
  for (int i = 0; i < 5; ++i) {
    items.emplace_back(1 + rng.below(40), ModelParams::initialize(spec, rng));
    plain.push_back(items.back().second);
  }
  const double c = 0.75;
  auto shifted_items = items;
  auto shifted_plain = plain;
  for (auto& [n, m] : shifted_items) m.values.array() += c;
  for (auto& m : shifted_plain) m.values.array() += c;
  Eigen::VectorXd expect = internal_sync(items).values.array() + c;
  EXPECT_LT(relative(internal_sync(shifted_items).values, expect), 1e-14);
  expect = external_sync(plain).values.array() + c;
  EXPECT_LT(relative(external_sync(shifted_plain).values, expect), 1e-14);
}

TEST(Sync, OneStepEqualsCentralizedStep) {
  Rng rng(8);
  for (const ModelSpec& spec : {ModelSpec{5, 4, {}}, ModelSpec{5, 4, {7}}}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto w = ModelParams::initialize(spec, rng);
      std::vector<Batch> batches;
      std::vector<std::pair<std::size_t, ModelParams>> steps;
      for (int k = 0; k < 6; ++k) {
        batches.push_back(random_batch(rng, 16, 5, 4));
        steps.emplace_back(16, local_step(w, batches.back(), 0.05));
      }
      const auto central = local_step(w, concatenate(batches), 0.05);
      EXPECT_LT(relative(internal_sync(steps).values, central.values), 1e-10);
    }
  }
}

TEST(Evaluate, PerfectAndUniformModels) {
  // Logits equal to the one-hot label when features are one-hot.
  const ModelSpec spec{3, 3, {}};
  ModelParams oracle = ModelParams::zeros(spec);
  for (Eigen::Index c = 0; c < 3; ++c) oracle.values(c * 3 + c) = 10.0;
  Batch test;
  test.features = Matrix::Zero(30, 3);
  for (int i = 0; i < 30; ++i) {
    test.labels.push_back(i % 3);
    test.features(i, i % 3) = 1.0;
  }
  EXPECT_EQ(evaluate(oracle, test).accuracy, 1.0);

  Rng rng(9);
  const auto uniform_test = random_batch(rng, 5000, 4, 10);
  const auto e = evaluate(ModelParams::zeros({4, 10, {}}), uniform_test);
  EXPECT_NEAR(e.accuracy, 0.1, 0.02);
  EXPECT_NEAR(e.mean_loss, std::log(10.0), 1e-12);
  EXPECT_THROW(evaluate(oracle, Batch{}), Error);
}

TEST(FedAvgRound, OneStepMatchesInternalSync) {
  Rng rng(10);
  const ModelSpec spec{4, 3, {}};
  const auto w = ModelParams::initialize(spec, rng);
  std::vector<std::vector<Batch>> devices;
  std::vector<std::pair<std::size_t, ModelParams>> steps;
  for (int k = 0; k < 4; ++k) {
    devices.push_back({random_batch(rng, 8, 4, 3)});
    steps.emplace_back(8, local_step(w, devices.back()[0], 0.1));
  }
  EXPECT_EQ(fedavg_round(w, devices, 0.1).values, internal_sync(steps).values);
}

TEST(FedAvgRound, ZeroRateAndIdenticalDevices) {
  Rng rng(11);
  const ModelSpec spec{4, 3, {5}};
  const auto w = ModelParams::initialize(spec, rng);
  std::vector<Batch> stream;
  for (int s = 0; s < 5; ++s) stream.push_back(random_batch(rng, 8, 4, 3));
  const std::vector<std::vector<Batch>> twins{stream, stream};
  EXPECT_EQ(fedavg_round(w, twins, 0.0).values, w.values);

  auto solo = w;
  for (const auto& b : stream) solo = local_step(solo, b, 0.2);
  EXPECT_LT(relative(fedavg_round(w, twins, 0.2, 2).values, solo.values), 1e-15);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(12);
  const auto p = ModelParams::initialize({7, 5, {3, 4}}, rng);
  const auto path = std::filesystem::temp_directory_path() / "fedgs_ckpt_test.bin";
  write_checkpoint(path, p);
  const auto q = read_checkpoint(path);
  EXPECT_EQ(q.spec, p.spec);
  EXPECT_EQ(q.values, p.values);
  EXPECT_EQ(std::filesystem::file_size(path) % 8, (std::filesystem::file_size(path) - p.values.size() * 8) % 8);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(read_checkpoint(path), Error);
  {
    std::ofstream out(path);
    out << "not json\n";
  }
  EXPECT_THROW(read_checkpoint(path), Error);
  std::filesystem::remove(path);
}
