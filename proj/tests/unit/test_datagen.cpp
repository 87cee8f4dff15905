#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "fedgs/datagen.hpp"

using namespace fedgs;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.classes = 5;
  c.feature_dim = 4;
  c.devices_per_group = 6;
  c.groups = 2;
  c.batches_per_device = 8;
  c.batch_size = 10;
  c.test_size = 200;
  c.seed = 17;
  return c;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

nlohmann::json sample(std::vector<double> x, int y) { return {{"x", x}, {"y", y}}; }

nlohmann::json minimal_manifest() {
  nlohmann::json samples = nlohmann::json::array();
  for (int i = 0; i < 5; ++i) samples.push_back(sample({0.5 * i, -1.0}, i % 3));
  return {{"F", 3},
          {"d", 2},
          {"n", 2},
          {"devices", {{{"group", 0}, {"device", 0}, {"samples", samples}}}},
          {"test", {sample({1.0, 2.0}, 2)}}};
}

}  // namespace

TEST(SynthConfig, JsonRoundTripAndErrors) {
  const auto c = small_config();
  const auto back = synth_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  auto doc = to_json(c);
  doc.erase("concentration");
  EXPECT_EQ(code_of([&] { synth_config_from_json(doc); }), ErrorCode::InvalidConfig);
  EXPECT_NE(message_of([&] { synth_config_from_json(doc); }).find("concentration"),
            std::string::npos);
  doc = to_json(c);
  doc["classes"] = 1;
  EXPECT_EQ(code_of([&] { synth_config_from_json(doc); }), ErrorCode::InvalidConfig);
  doc = to_json(c);
  doc["concentration"] = -0.1;
  EXPECT_EQ(code_of([&] { synth_config_from_json(doc); }), ErrorCode::InvalidConfig);
}

TEST(Generate, ShapeAndBatchSizes) {
  const auto c = small_config();
  const auto fed = generate_federation(c);
  ASSERT_EQ(fed.groups.size(), 2u);
  EXPECT_EQ(fed.device_count(), 12u);
  EXPECT_EQ(fed.test.labels.size(), 200u);
  EXPECT_EQ(fed.test.features.cols(), 4);
  for (const auto& group : fed.groups) {
    for (const auto& s : group) {
      EXPECT_EQ(s.remaining(), 8u);
      EXPECT_EQ(s.data_size(), 80);
      EXPECT_EQ(s.peek_next_histogram().total(), 10);
    }
  }
}

TEST(Generate, SameSeedSameStreams) {
  auto a = generate_federation(small_config());
  auto b = generate_federation(small_config());
  EXPECT_EQ(a.test.features, b.test.features);
  EXPECT_EQ(a.test.labels, b.test.labels);
  for (std::size_t m = 0; m < a.groups.size(); ++m) {
    for (std::size_t k = 0; k < a.groups[m].size(); ++k) {
      while (!a.groups[m][k].exhausted()) {
        const auto x = a.groups[m][k].fetch_batch();
        const auto y = b.groups[m][k].fetch_batch();
        EXPECT_EQ(x.labels, y.labels);
        EXPECT_EQ(x.features, y.features);
      }
    }
  }
  auto other = small_config();
  other.seed = 18;
  EXPECT_NE(generate_federation(other).test.labels, a.test.labels);
}

TEST(Generate, ConcentrationControlsHeterogeneity) {
  auto c = small_config();
  c.classes = 10;
  c.groups = 10;
  c.devices_per_group = 10;
  c.batches_per_device = 1;
  c.concentration = 1e6;
  const auto iid = generate_federation(c);
  const auto uniform = ClassDistribution::uniform(10);
  for (const auto& g : iid.groups) {
    for (const auto& s : g) EXPECT_LT(divergence(s.source_distribution(), uniform), 0.05);
  }

  c.concentration = 0.1;
  const auto skewed = generate_federation(c);
  std::vector<ClassDistribution> dists;
  for (const auto& g : skewed.groups) {
    for (const auto& s : g) dists.push_back(s.source_distribution());
  }
  std::vector<double> pairwise;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    for (std::size_t j = i + 1; j < dists.size(); ++j) pairwise.push_back(divergence(dists[i], dists[j]));
  }
  std::nth_element(pairwise.begin(), pairwise.begin() + pairwise.size() / 2, pairwise.end());
  EXPECT_GT(pairwise[pairwise.size() / 2], 0.3);
}

TEST(Stream, PeekMatchesFetchInOrder) {
  auto fed = generate_federation(small_config());
  auto& s = fed.groups[1][3];
  std::size_t taken = 0;
  while (!s.exhausted()) {
    const auto declared = s.peek_next_histogram();
    const auto batch = s.fetch_batch();
    EXPECT_EQ(histogram(batch.labels, 5), declared);
    EXPECT_EQ(batch.features.rows(), 10);
    ++taken;
    EXPECT_EQ(s.fetched(), taken);
    EXPECT_EQ(s.remaining(), 8u - taken);
  }
  EXPECT_FALSE(s.can_supply(1));
  EXPECT_EQ(code_of([&] { s.fetch_batch(); }), ErrorCode::StreamExhausted);
  EXPECT_EQ(code_of([&] { s.peek_next_histogram(); }), ErrorCode::StreamExhausted);
}

TEST(Stream, SnapshotDoesNotConsume) {
  auto fed = generate_federation(small_config());
  auto& s = fed.groups[0][0];
  const auto snap = s.snapshot();
  ASSERT_EQ(snap.size(), 8u);
  EXPECT_EQ(s.remaining(), 8u);
  for (const auto& b : snap) {
    const auto got = s.fetch_batch();
    EXPECT_EQ(got.labels, b.labels);
    EXPECT_EQ(got.features, b.features);
  }
}

TEST(Stream, RegenerationKeepsTheStreamAlive) {
  auto c = small_config();
  c.regenerate = true;
  auto fed = generate_federation(c);
  auto& s = fed.groups[0][2];
  for (int i = 0; i < 30; ++i) {
    EXPECT_TRUE(s.can_supply(5));
    s.fetch_batch();
  }
  EXPECT_EQ(s.fetched(), 30u);
  EXPECT_EQ(s.data_size(), 80);
}

TEST(Stream, LabelFrequenciesConvergeToSource) {
  auto c = small_config();
  c.groups = 1;
  c.devices_per_group = 1;
  c.batches_per_device = 2000;
  c.batch_size = 32;
  c.concentration = 1.0;
  auto fed = generate_federation(c);
  const auto& s = fed.groups[0][0];
  const auto empirical = s.local_distribution();
  for (std::size_t f = 0; f < 5; ++f) EXPECT_NEAR(empirical[f], s.source_distribution()[f], 0.01);
}

TEST(Stream, GlobalDistributionIsTheSizeWeightedMixture) {
  const auto fed = generate_federation(small_config());
  ClassCounts totals(5);
  for (const auto& g : fed.groups) {
    for (const auto& s : g) totals += s.label_totals();
  }
  const auto global = fed.global_distribution();
  const auto expect = normalize(totals);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_NEAR(global[f], expect[f], 1e-15);
}

TEST(Features, RowsScatterAroundTheirClassMean) {
  auto c = small_config();
  c.noise = 1e-9;
  FeatureSource src(c);
  Rng rng(1);
  const auto x = src.features({0, 3, 3}, rng);
  EXPECT_LT((x.row(0) - src.class_means().row(0)).norm(), 1e-7);
  EXPECT_LT((x.row(2) - src.class_means().row(3)).norm(), 1e-7);

  c.noise = 1.0;
  FeatureSource wide(c);
  const std::vector<int> ones(4000, 1);
  const Matrix y = wide.features(ones, rng);
  const Eigen::RowVectorXd centred = y.colwise().mean() - wide.class_means().row(1);
  EXPECT_LT(centred.cwiseAbs().maxCoeff(), 0.1);
}

TEST(Manifest, MinimalSingleDevice) {
  const auto fed = parse_manifest(minimal_manifest());
  ASSERT_EQ(fed.groups.size(), 1u);
  const auto& s = fed.groups[0][0];
  // Five samples with n = 2 give two batches; the last sample stays unqueued.
  EXPECT_EQ(s.remaining(), 2u);
  EXPECT_EQ(s.data_size(), 5);
  EXPECT_EQ(s.peek_next_histogram(), ClassCounts(std::vector<std::int64_t>{1, 1, 0}));
  EXPECT_EQ(fed.test.labels, std::vector<int>{2});
}

TEST(Manifest, ErrorsNameThePath) {
  auto doc = minimal_manifest();
  doc["devices"][0]["samples"][3]["y"] = 3;
  EXPECT_EQ(code_of([&] { parse_manifest(doc); }), ErrorCode::MalformedManifest);
  EXPECT_NE(message_of([&] { parse_manifest(doc); }).find("$.devices[0].samples[3].y"),
            std::string::npos);

  doc = minimal_manifest();
  doc["devices"][0]["samples"][1]["x"] = {1.0};
  EXPECT_NE(message_of([&] { parse_manifest(doc); }).find("$.devices[0].samples[1].x"),
            std::string::npos);

  doc = minimal_manifest();
  doc["devices"][0]["group"] = 1;
  EXPECT_EQ(code_of([&] { parse_manifest(doc); }), ErrorCode::MalformedManifest);

  doc = minimal_manifest();
  doc["devices"][0]["samples"] = nlohmann::json::array();
  EXPECT_EQ(code_of([&] { parse_manifest(doc); }), ErrorCode::MalformedManifest);

  doc = minimal_manifest();
  doc.erase("F");
  EXPECT_EQ(code_of([&] { parse_manifest(doc); }), ErrorCode::MalformedManifest);
}

TEST(Manifest, ExportLoadRoundTrip) {
  auto c = small_config();
  c.batches_per_device = 3;
  const auto fed = generate_federation(c);
  const auto path = std::filesystem::temp_directory_path() / "fedgs_manifest_test.json";
  export_manifest(fed, path);
  auto back = load_manifest(path);
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(fed));
  auto original = generate_federation(c);
  for (std::size_t m = 0; m < fed.groups.size(); ++m) {
    for (std::size_t k = 0; k < fed.groups[m].size(); ++k) {
      EXPECT_EQ(back.groups[m][k].label_totals(), original.groups[m][k].label_totals());
      while (!original.groups[m][k].exhausted()) {
        const auto x = original.groups[m][k].fetch_batch();
        const auto y = back.groups[m][k].fetch_batch();
        EXPECT_EQ(x.labels, y.labels);
        EXPECT_EQ(x.features, y.features);
      }
    }
  }
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { load_manifest(path); }), ErrorCode::IoError);
}
