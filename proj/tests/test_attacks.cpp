// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "splitbench/attacks.hpp"
#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"
#include "splitbench/ops.hpp"
#include "support/toy.hpp"

namespace splitbench {
namespace {

using testing::random_tokens;
using testing::toy_config;

std::vector<std::vector<std::int32_t>> rows(const TokenBatch& x) {
  std::vector<std::vector<std::int32_t>> out;
  for (std::size_t b = 0; b < x.batch; ++b) out.emplace_back(x.ids.begin() + b * x.seq, x.ids.begin() + (b + 1) * x.seq);
  return out;
}

TEST(AttackSpec, PhaseRulesAndDefaults) {
  EXPECT_THROW((AttackSpec{AttackKind::BLI, Phase::Inference}).validate(), ConfigError);
  EXPECT_THROW((AttackSpec{AttackKind::NS, Phase::Inference}).validate(), ConfigError);
  EXPECT_NO_THROW(AttackSpec::defaults(AttackKind::VMI, Phase::Training).validate());
  EXPECT_EQ(AttackSpec::defaults(AttackKind::VMI).epochs, 100);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::VMI).lr, 0.01);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::RMI).epochs, 500);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::RMI).lr, 0.005);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::RMI).temperature, 0.5);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::BLI).epochs, 500);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::BLI).lr, 0.05);
  EXPECT_EQ(AttackSpec::defaults(AttackKind::BLI).phase, Phase::Training);
  const AttackSpec s = AttackSpec::defaults(AttackKind::BiSR);
  EXPECT_EQ(AttackSpec::from_json(s.to_json()).to_json(), s.to_json());
}

TEST(Decode, CosineTiesGoToLowestId) {
  Tensor table({3, 2}, {1, 0, 2, 0, 0, 1});
  Tensor e({2, 2}, {5, 0, 0.1f, 3});
  EXPECT_EQ(decode_by_cosine(e, table), (std::vector<std::int32_t>{0, 2}));
}

TEST(Vmi, EmbeddingOnlyHeadRecoversEverything) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  const ModelSlice head = make_head(m, 0);
  Rng rng(1);
  const TokenBatch x = random_tokens(rng, 3, 8, 64);
  const Tensor h = head.forward(x, {});
  auto r = vmi(h, head, 100, 0.01, Rng(2));
  ASSERT_FALSE(r.failed);
  EXPECT_DOUBLE_EQ(mia_recall(r.recovered, rows(x)).mean, 1.0);
}

TEST(Vmi, LossFallsOnDeeperHead) {
  const Transformer m = Transformer::build(toy_config(Arch::DecoderOnly), 3);
  const ModelSlice head = make_head(m, 2);
  Rng rng(1);
  const Tensor h = head.forward(random_tokens(rng, 2, 6, 64), {});
  auto r = vmi(h, head, 50, 0.01, Rng(3));
  ASSERT_EQ(r.loss_trace.size(), 51u);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  EXPECT_EQ(r.recovered.size(), 2u);
  EXPECT_EQ(r.recovered[0].size(), 6u);
}

TEST(Vmi, RejectsWrongShape) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  EXPECT_THROW(vmi(Tensor::zeros({2, 3}), make_head(m, 1), 1, 0.01, Rng(1)), ShapeError);
}

TEST(Vmi, DeterministicForSeed) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  const ModelSlice head = make_head(m, 1);
  Rng rng(1);
  const Tensor h = head.forward(random_tokens(rng, 2, 5, 64), {});
  auto a = vmi(h, head, 10, 0.01, Rng(4));
  auto b = vmi(h, head, 10, 0.01, Rng(4));
  EXPECT_EQ(a.recovered, b.recovered);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Rmi, OneHotStartAtLowTemperatureIsAFixedPoint) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  const ModelSlice head = make_head(m, 2);
  Rng rng(1);
  const TokenBatch x = random_tokens(rng, 2, 5, 64);
  const Tensor h = head.forward(x, {});
  std::vector<float> z(2 * 5 * 64, 0.0f);
  for (std::size_t i = 0; i < x.ids.size(); ++i) z[i * 64 + static_cast<std::size_t>(x.ids[i])] = 1.0f;
  auto r = rmi(h, head, 0, 0.005, 1e-3, Rng(2), Tensor({2, 5, 64}, z));
  ASSERT_FALSE(r.failed);
  EXPECT_LT(r.loss_trace.front(), 1e-8);
  EXPECT_DOUBLE_EQ(mia_recall(r.recovered, rows(x)).mean, 1.0);
}

TEST(Bisr, PretrainedInversionBeatsGaussianStart) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  const ModelSlice head = make_head(m, 0);
  Rng rng(1);
  std::vector<TokenBatch> aux;
  for (int i = 0; i < 20; ++i) aux.push_back(random_tokens(rng, 8, 8, 64));
  const TokenBatch x = random_tokens(rng, 4, 8, 64);
  const Tensor h = head.forward(x, {});
  const Tensor target = head.embed_tokens(x);
  InversionNet g = pretrain_inversion(head, aux, nullptr, 10, 0.003, Rng(2));
  Rng gr(3);
  std::vector<float> gauss(target.numel());
  for (auto& v : gauss) v = static_cast<float>(gr.normal() * 0.02);
  const double mse_g = ops::mse_loss(g.forward(h), target).item();
  const double mse_0 = ops::mse_loss(Tensor(target.shape(), gauss), target).item();
  EXPECT_LT(mse_g, mse_0);
}

TEST(Bisr, ZeroPretrainingIsVmiFromTheUntrainedNetwork) {
  const Transformer m = Transformer::build(toy_config(Arch::EncoderOnly), 3);
  const ModelSlice head = make_head(m, 1);
  Rng rng(1);
  std::vector<TokenBatch> aux{random_tokens(rng, 2, 5, 64)};
  const Tensor h = head.forward(random_tokens(rng, 2, 5, 64), {});
  Rng seed(9);
  auto a = bisr(h, head, aux, nullptr, 0, 5, 0.01, seed);
  InversionNet g = pretrain_inversion(head, aux, nullptr, 0, 0.01, seed.split("pretrain"));
  auto b = vmi(h, head, 5, 0.01, seed.split("vmi"), g.forward(h).detach());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.recovered, b.recovered);
  EXPECT_THROW(bisr(h, head, {}, nullptr, 1, 1, 0.01, seed), AttackError);
}

TEST(Bli, SingleSampleLogitGradientsAreExact) {
  Rng rng(5);
  std::vector<std::vector<float>> observed;
  std::vector<ShadowPair> shadow;
  std::vector<std::int32_t> truth;
  for (int b = 0; b < 40; ++b) {
    Tensor logits({1, 3}, {static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                           static_cast<float>(rng.normal())});
    const auto y = static_cast<std::int32_t>(rng.uniform_int(3));
    truth.push_back(y);
    Tensor leaf({1, 3}, {logits.data().begin(), logits.data().end()}, true);
    const std::vector<std::int32_t> t{y};
    ops::cross_entropy(leaf, t).backward();
    observed.push_back({leaf.grad().begin(), leaf.grad().end()});
    for (auto& p : bli_shadow_pairs(logits, nullptr, 3)) shadow.push_back(p);
  }
  auto r = bli(observed, shadow, 3, 500, 0.05, Rng(6));
  EXPECT_DOUBLE_EQ(mp_classification(r.predicted, truth), 1.0);
  EXPECT_THROW(bli({}, shadow, 3, 1, 0.05, Rng(1)), AttackError);
}

TEST(Bli, TailShadowMatchesTheTrueGradient) {
  const auto cfg = toy_config(Arch::EncoderOnly);
  const Transformer m = Transformer::build(cfg, 3);
  auto parts = partition(m, PartitionPlan::hbt(2, 2, 2));
  Rng rng(1);
  const Tensor h2 = parts[1].forward(parts[0].forward(random_tokens(rng, 1, 5, 64), {}), {});
  auto pairs = bli_shadow_pairs(h2, &parts[2], 2);
  ASSERT_EQ(pairs.size(), 2u);
  Tensor leaf(h2.shape(), {h2.data().begin(), h2.data().end()}, true);
  const std::vector<std::int32_t> y{1};
  ops::cross_entropy(parts[2].forward(leaf, {}), y).backward();
  EXPECT_EQ(pairs[1].label, 1);
  EXPECT_EQ(pairs[1].gradient, std::vector<float>(leaf.grad().begin(), leaf.grad().end()));
}

TEST(Ns, TwoMeansExamples) {
  EXPECT_EQ(ns({0.1, 5.0, 0.2}).predicted, (std::vector<std::int32_t>{0, 1, 0}));
  auto flat = ns({1.0, 1.0, 1.0, 1.0});
  EXPECT_TRUE(flat.degenerate);
  EXPECT_EQ(flat.predicted, (std::vector<std::int32_t>{0, 0, 0, 0}));
  EXPECT_FALSE(ns({0.1, 5.0, 0.2}).degenerate);
}

TEST(Ns, MatchesBruteForceTwoMeans) {
  Rng rng(8);
  for (int c = 0; c < 20; ++c) {
    std::vector<double> v(5 + rng.uniform_int(20));
    for (auto& x : v) x = rng.uniform() < 0.3 ? 3 + rng.uniform() : rng.uniform();
    auto r = ns(v);
    // Lloyd from the extremes on this data converges to the best split.
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    double best = 1e300, thr = 0;
    for (std::size_t k = 1; k < s.size(); ++k) {
      double m0 = 0, m1 = 0;
      for (std::size_t i = 0; i < k; ++i) m0 += s[i];
      for (std::size_t i = k; i < s.size(); ++i) m1 += s[i];
      m0 /= k;
      m1 /= (s.size() - k);
      double sse = 0;
      for (std::size_t i = 0; i < s.size(); ++i) sse += std::pow(s[i] - (i < k ? m0 : m1), 2);
      if (sse < best) best = sse, thr = 0.5 * (m0 + m1);
    }
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(r.predicted[i], v[i] > thr ? 1 : 0);
  }
}

}  // namespace
}  // namespace splitbench
