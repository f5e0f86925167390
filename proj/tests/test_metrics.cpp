// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"
#include "splitbench/rng.hpp"

namespace splitbench {
namespace {

TEST(Mp, Examples) {
  EXPECT_DOUBLE_EQ(mp_classification({1, 0, 1}, {1, 0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(mp_classification({1, 0, 1}, {1, 1, 1}), 2.0 / 3.0);
  EXPECT_THROW(mp_classification({}, {}), MetricError);
  EXPECT_THROW(mp_classification({1}, {1, 0}), MetricError);
}

TEST(Mp, NextTokenSkipsIgnored) {
  Tensor logits({2, 2, 3}, {0, 1, 0, 5, 0, 0, 0, 0, 9, 1, 2, 3});
  // argmax: 1, 0, 2, 2
  EXPECT_DOUBLE_EQ(mp_next_token(logits, {1, -100, 2, 0}), 2.0 / 3.0);
  EXPECT_THROW(mp_next_token(logits, {-100, -100, -100, -100}), MetricError);
  EXPECT_THROW(mp_next_token(logits, {1, 2}), MetricError);
}

TEST(Mp, RandomizedAgainstCounting) {
  Rng rng(1);
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = 1 + rng.uniform_int(30);
    std::vector<std::int32_t> p(n), y(n);
    int hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<std::int32_t>(rng.uniform_int(3));
      y[i] = static_cast<std::int32_t>(rng.uniform_int(3));
      hits += p[i] == y[i];
    }
    EXPECT_DOUBLE_EQ(mp_classification(p, y), static_cast<double>(hits) / n);
  }
}

TEST(Recall, Examples) {
  EXPECT_DOUBLE_EQ(mia_recall({{4, 5, 6}}, {{4, 5, 6}}).mean, 1.0);
  EXPECT_DOUBLE_EQ(mia_recall({{1, 2, 3}}, {{1, 2, 4, 5}}).mean, 0.5);
  EXPECT_DOUBLE_EQ(mia_recall({{7, 8}}, {{1, 2}}).mean, 0.0);
  // Position-insensitive, multiset, padding excluded.
  EXPECT_DOUBLE_EQ(mia_recall({{3, 3, 0, 0}}, {{3, 1, 0, 0}}).mean, 0.5);
  EXPECT_DOUBLE_EQ(mia_recall({{3, 3}}, {{3, 3}}).mean, 1.0);
  auto r = mia_recall({{1}, {2}}, {{0, 0}, {2}});
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_THROW(mia_recall({{1}}, {{0}}), MetricError);
}

// Recall by repeated removal from a list, independent of the map-based count.
double recall_oracle(std::vector<std::int32_t> rec, const std::vector<std::int32_t>& truth) {
  int n = 0, hit = 0;
  for (auto t : truth) {
    if (t == 0) continue;
    ++n;
    auto it = std::find(rec.begin(), rec.end(), t);
    if (it != rec.end()) {
      ++hit;
      rec.erase(it);
    }
  }
  return static_cast<double>(hit) / n;
}

TEST(Recall, RandomizedAgainstOracle) {
  Rng rng(2);
  for (int c = 0; c < 20; ++c) {
    std::vector<std::vector<std::int32_t>> rec, truth;
    double sum = 0.0;
    const std::size_t samples = 1 + rng.uniform_int(5);
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t len = 1 + rng.uniform_int(10);
      std::vector<std::int32_t> a(len), b(len);
      for (auto& v : a) v = static_cast<std::int32_t>(rng.uniform_int(6));
      for (auto& v : b) v = static_cast<std::int32_t>(rng.uniform_int(6));
      b[0] = 1 + static_cast<std::int32_t>(rng.uniform_int(5));
      sum += recall_oracle(a, b);
      rec.push_back(a);
      truth.push_back(b);
    }
    EXPECT_NEAR(mia_recall(rec, truth).mean, sum / samples, 1e-12);
  }
}

TEST(Dcs, Examples) {
  EXPECT_DOUBLE_EQ(dcs(0.8, 0.3, 0.8, 0.3), 1.0);
  EXPECT_NEAR(dcs(0.9, 0.6, 0.9, 0.0, 0.5), 1.0 / (1.0 + std::sqrt(0.18)), 1e-15);
  EXPECT_NEAR(dcs(0.9, 0.6, 0.9, 0.0, 0.5), 0.7021170, 1e-7);  // 1 / (1 + 0.4242641)
  EXPECT_DOUBLE_EQ(dcs(0.7, 0.1, 0.9, 0.0, 1.0), dcs(0.7, 0.9, 0.9, 0.0, 1.0));
  EXPECT_THROW(dcs(1.2, 0, 1, 0), MetricError);
  EXPECT_THROW(dcs(0.5, 0, 1, 0, 1.5), MetricError);
}

TEST(Dcs, StrictlyDecreasingInEachGap) {
  Rng rng(3);
  for (int c = 0; c < 200; ++c) {
    const double mp_ref = rng.uniform(), ap_ref = rng.uniform(), beta = 0.05 + 0.9 * rng.uniform();
    const double gap1 = rng.uniform() * 0.5, gap2 = gap1 + 0.01 + rng.uniform() * 0.4;
    if (ap_ref + gap2 <= 1.0) EXPECT_GT(dcs(mp_ref, ap_ref + gap1, mp_ref, ap_ref, beta), dcs(mp_ref, ap_ref + gap2, mp_ref, ap_ref, beta));
    if (mp_ref - gap2 >= 0.0) EXPECT_GT(dcs(mp_ref - gap1, ap_ref, mp_ref, ap_ref, beta), dcs(mp_ref - gap2, ap_ref, mp_ref, ap_ref, beta));
  }
}

TEST(Dcs, TypeAndCombinedScores) {
  EXPECT_DOUBLE_EQ(t_dcs({0.42}), 0.42);
  EXPECT_DOUBLE_EQ(t_dcs({0.8, 0.6}), 0.7);
  EXPECT_THROW(t_dcs({}), MetricError);
  EXPECT_NEAR(c_dcs({0.7680, 0.9347}, {0.5, 0.5}), 0.85135, 1e-12);
  EXPECT_NEAR(c_dcs({0.7074, 0.9460}, {0.5, 0.5}), 0.8267, 1e-12);
  EXPECT_DOUBLE_EQ(c_dcs({0.61}, {1.0}), 0.61);
  EXPECT_DOUBLE_EQ(c_dcs({0.3, 0.9}, {0.5, 0.5}), c_dcs({0.9, 0.3}, {0.5, 0.5}));
  EXPECT_THROW(c_dcs({0.3, 0.9}, {0.5, 0.6}), MetricError);
}

TEST(Dcs, DeltaChecksComparability) {
  EXPECT_DOUBLE_EQ(delta_dcs(0.8, 0.8), 0.0);
  EXPECT_NEAR(delta_dcs(0.85, 0.80), 0.05, 1e-15);
  nlohmann::json a{{"strategy", "Full-LoRA"}, {"task", "t"}}, b{{"strategy", "Full-Vanilla"}, {"task", "t"}};
  EXPECT_NEAR(delta_dcs(0.85, a, 0.80, b, "strategy"), 0.05, 1e-15);
  b["task"] = "u";
  EXPECT_THROW(delta_dcs(0.85, a, 0.80, b, "strategy"), MetricError);
}

TEST(MetricRegistry, OutOfScopeIdsFailLoudly) {
  EXPECT_NO_THROW(require_metric("accuracy"));
  EXPECT_NO_THROW(require_metric("token_accuracy"));
  for (const char* id : {"pearson", "exact_match", "rouge", "codebleu"}) {
    EXPECT_TRUE(is_known_metric(id));
    EXPECT_THROW(require_metric(id), MetricError);
  }
  EXPECT_THROW(require_metric("bleu4"), MetricError);
}

}  // namespace
}  // namespace splitbench
