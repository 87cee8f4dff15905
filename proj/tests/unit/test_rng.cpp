#include <algorithm>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "fedgs/parallel.hpp"
#include "fedgs/rng.hpp"

using namespace fedgs;

TEST(Rng, DerivedStreamsDependOnlyOnCoordinates) {
  Rng a = Rng::derive(42, StreamTag::Selection, {3, 1});
  Rng b = Rng::derive(42, StreamTag::Selection, {3, 1});
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());

  Rng c = Rng::derive(42, StreamTag::Selection, {1, 3});
  Rng d = Rng::derive(42, StreamTag::Sampler, {3, 1});
  Rng e = Rng::derive(43, StreamTag::Selection, {3, 1});
  Rng f = Rng::derive(42, StreamTag::Selection, {3, 1});
  const auto first = f();
  EXPECT_NE(c(), first);
  EXPECT_NE(d(), first);
  EXPECT_NE(e(), first);
}

TEST(Rng, BelowIsInRangeAndRoughlyUniform) {
  Rng rng(7);
  std::vector<int> hits(6, 0);
  for (int i = 0; i < 60000; ++i) {
    const auto v = rng.below(6);
    ASSERT_LT(v, 6u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_NEAR(h, 10000, 400);
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(3);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(Rng, SubsetIsSortedAndDistinct) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = sample_subset(rng, 20, 7);
    ASSERT_EQ(s.size(), 7u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
    EXPECT_LT(s.back(), 20u);
  }
  EXPECT_TRUE(sample_subset(rng, 5, 0).empty());
  EXPECT_EQ(sample_subset(rng, 4, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Rng, DirichletMeanAndSupport) {
  Rng rng(8);
  const std::vector<double> alpha{1.0, 2.0, 3.0, 4.0};
  std::vector<double> mean(4, 0.0);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_dirichlet(rng, alpha);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (int c = 0; c < 4; ++c) mean[c] += p[c] / draws;
  }
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(mean[c], alpha[c] / 10.0, 0.01);
}

TEST(Rng, DirichletTinyConcentrationStaysValid) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_dirichlet(rng, std::vector<double>(10, 1e-3));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Rng, CategoricalFrequencies) {
  Rng rng(4);
  const std::vector<double> w{0.1, 0.0, 0.6, 0.3};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 50000; ++i) ++hits[sample_categorical(rng, w)];
  EXPECT_EQ(hits[1], 0);
  EXPECT_NEAR(hits[0] / 50000.0, 0.1, 0.01);
  EXPECT_NEAR(hits[2] / 50000.0, 0.6, 0.01);
}

TEST(ParallelFor, CoversEveryIndexOnceAndRethrows) {
  for (std::size_t workers : {1u, 3u, 16u}) {
    std::vector<int> seen(257, 0);
    parallel_for(seen.size(), workers, [&](std::size_t i) { ++seen[i]; });
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
  }
  EXPECT_THROW(parallel_for(10, 4,
                            [](std::size_t i) {
                              if (i == 5) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}
