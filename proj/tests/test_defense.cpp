// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "splitbench/defense.hpp"
#include "splitbench/errors.hpp"
#include "splitbench/ops.hpp"
#include "support/split_harness.hpp"

namespace splitbench {
namespace {

using testing::toy_config;

DefenseSpec spec(DefenseKind k, double strength, DefensePosition pos = DefensePosition::Head,
                 Phase phase = Phase::Training, nlohmann::json extras = nlohmann::json::object()) {
  return DefenseSpec{k, pos, phase, strength, std::move(extras)};
}

DefenseEnv toy_env(PartitionMode mode = PartitionMode::HT, std::uint64_t seed = 5) {
  DefenseEnv env;
  env.model = toy_config(Arch::EncoderOnly);
  env.mode = mode;
  const Transformer m = Transformer::build(env.model, 3);
  env.embedding_table = make_head(m, 0).embedding_table();
  env.token_counts.resize(64);
  for (std::size_t v = 0; v < 64; ++v) env.token_counts[v] = 1000 - v;  // high ids are rare
  env.seed = seed;
  return env;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(DefenseSpec, GridsRunWeakestToStrongest) {
  EXPECT_EQ(strength_grid(DefenseKind::DP), (std::vector<double>{500, 100, 70, 50}));
  EXPECT_EQ(strength_grid(DefenseKind::SP), (std::vector<double>{95, 96, 97, 98}));
  EXPECT_EQ(strength_grid(DefenseKind::SanText), (std::vector<double>{5, 1, 0.1, 0.01}));
  EXPECT_EQ(strength_grid(DefenseKind::CusText), (std::vector<double>{5, 1, 0.1, 0.01}));
  EXPECT_EQ(strength_grid(DefenseKind::RanText), (std::vector<double>{30, 25, 20, 15, 10}));
  EXPECT_EQ(strength_grid(DefenseKind::SnD), (std::vector<double>{1e5, 1e4, 1e3, 100, 10}));
  EXPECT_EQ(strength_grid(DefenseKind::AT), (std::vector<double>{5, 1, 0.1, 0.01, 0.001}));
  // The printed grid repeats 1e-3; the first entry is read as 1e-5.
  EXPECT_EQ(strength_grid(DefenseKind::MID), (std::vector<double>{1e-5, 1e-4, 1e-3, 0.01, 0.1, 0.5}));
  EXPECT_EQ(strength_grid(DefenseKind::TO), (std::vector<double>{250, 200, 150, 100, 50}));
}

TEST(DefenseSpec, PositionAndStrengthValidated) {
  for (DefenseKind k : {DefenseKind::SanText, DefenseKind::CusText, DefenseKind::RanText, DefenseKind::SnD,
                        DefenseKind::TO}) {
    EXPECT_TRUE(head_only(k));
    EXPECT_THROW(spec(k, 5, DefensePosition::Tail).validate(), ConfigError);
    EXPECT_THROW(spec(k, 5, DefensePosition::Both).validate(), ConfigError);
  }
  for (DefenseKind k : {DefenseKind::DP, DefenseKind::SP, DefenseKind::AT, DefenseKind::MID}) {
    EXPECT_FALSE(head_only(k));
    EXPECT_NO_THROW(spec(k, 1, DefensePosition::Both).validate());
  }
  EXPECT_THROW(spec(DefenseKind::DP, 0).validate(), ConfigError);
  EXPECT_THROW(spec(DefenseKind::DP, -1).validate(), ConfigError);
  EXPECT_THROW(spec(DefenseKind::SP, 100).validate(), ConfigError);
  EXPECT_THROW(spec(DefenseKind::MID, -0.1).validate(), ConfigError);
  EXPECT_THROW(spec(DefenseKind::TO, 1).validate(), ConfigError);
  EXPECT_THROW(spec(DefenseKind::SnD, 100, DefensePosition::Head, Phase::Training).validate(), ConfigError);
  EXPECT_NO_THROW(spec(DefenseKind::SnD, 100, DefensePosition::Head, Phase::Inference).validate());
  EXPECT_THROW(make_defense(spec(DefenseKind::MID, 0.1, DefensePosition::Tail), Slot::Tail, toy_env()),
               ConfigError);
}

TEST(DefenseSpec, JsonRoundTrip) {
  DefenseSpec s = spec(DefenseKind::CusText, 0.1, DefensePosition::Head, Phase::Inference, {{"k", 8}});
  DefenseSpec back = DefenseSpec::from_json(s.to_json());
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.position, s.position);
  EXPECT_EQ(back.phase, s.phase);
  EXPECT_EQ(back.strength, s.strength);
  EXPECT_EQ(back.extras, s.extras);
}

TEST(Dp, InfiniteEpsilonIsClipOnly) {
  Rng rng(1);
  Tensor t({3, 2}, {3.0f, -1.0f, 0.25f, 0.25f, 0.0f, -2.0f});
  Tensor out = dp_perturb(t, std::numeric_limits<double>::infinity(), 1.0, rng);
  EXPECT_EQ(values(out), (std::vector<float>{0.75f, -0.25f, 0.25f, 0.25f, 0.0f, -1.0f}));
}

TEST(Dp, LaplaceNoiseMoments) {
  const std::size_t n = 100000;
  const double eps = 50.0, clip = 1.0, b = 2 * clip / eps;
  Rng rng(2);
  Tensor out = dp_perturb(Tensor::zeros({n, 1}), eps, clip, rng);
  double mean = 0.0, sq = 0.0;
  for (float v : out.data()) {
    mean += v;
    sq += static_cast<double>(v) * v;
  }
  mean /= n;
  sq /= n;
  EXPECT_LT(std::abs(mean), 3 * b * std::sqrt(2.0) / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sq, 2 * b * b, 0.05 * 2 * b * b);
}

TEST(Dp, NoiseGrowsAlongGrid) {
  double prev = 0.0;
  for (double eps : strength_grid(DefenseKind::DP)) {
    Rng rng(3);
    Tensor out = dp_perturb(Tensor::zeros({20000, 1}), eps, 1.0, rng);
    double mad = 0.0;
    for (float v : out.data()) mad += std::abs(v);
    mad /= 20000;
    EXPECT_GT(mad, prev) << eps;
    prev = mad;
  }
}

TEST(Sp, Examples) {
  Tensor t({4}, {0.5f, -0.01f, 0.02f, 3.0f});
  EXPECT_EQ(values(sp_sparsify(t, 50)), (std::vector<float>{0.5f, 0.0f, 0.0f, 3.0f}));
  EXPECT_EQ(values(sp_sparsify(t, 0)), values(t));
  Rng rng(4);
  Tensor big = random_tensor({10, 10}, rng);
  Tensor s = sp_sparsify(big, 98);
  EXPECT_EQ(s.shape(), big.shape());
  std::size_t nz = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (s.data()[i] != 0.0f) {
      ++nz;
      EXPECT_EQ(s.data()[i], big.data()[i]);
    }
  }
  EXPECT_EQ(nz, 2u);
}

TEST(Sp, KeepsLargestMagnitudes) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_tensor({7, 9}, rng);
    const double r = 5.0 * trial;
    Tensor s = sp_sparsify(t, r);
    const std::size_t drop = static_cast<std::size_t>(std::floor(r * 63 / 100.0));
    std::vector<float> mags;
    for (float v : t.data()) mags.push_back(std::abs(v));
    std::sort(mags.begin(), mags.end());
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < 63; ++i) {
      if (s.data()[i] == 0.0f) {
        ++zeros;
        if (drop > 0) EXPECT_LE(std::abs(t.data()[i]), mags[drop - 1]);
      }
    }
    EXPECT_EQ(zeros, drop);
  }
}

TokenBatch all_tokens(std::size_t vocab) {
  TokenBatch x;
  x.batch = 1;
  x.seq = vocab;
  for (std::size_t v = 0; v < vocab; ++v) x.ids.push_back(static_cast<std::int32_t>(v));
  return x;
}

TEST(Mldp, LargeEpsilonKeepsTokens) {
  const DefenseEnv env = toy_env();
  const TokenBatch x = all_tokens(64);
  for (DefenseKind k : {DefenseKind::SanText, DefenseKind::CusText, DefenseKind::RanText}) {
    auto d = make_defense(spec(k, 1e6), Slot::Head, env);
    Rng rng(1);
    EXPECT_EQ(d->on_tokens(x, {}, rng).ids, x.ids) << to_string(k);
  }
}

// Candidate lists recomputed here from the raw table.
std::vector<std::int32_t> knn(const Tensor& table, std::int32_t u, std::size_t k) {
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<std::pair<double, std::int32_t>> d;
  for (std::size_t v = 1; v < V; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double t = static_cast<double>(table.data()[u * D + j]) - table.data()[v * D + j];
      s += t * t;
    }
    d.emplace_back(s, static_cast<std::int32_t>(v));
  }
  std::sort(d.begin(), d.end());
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

TEST(Mldp, TinyEpsilonSamplesCandidatesUniformly) {
  const DefenseEnv env = toy_env();
  auto d = make_defense(spec(DefenseKind::CusText, 1e-9, DefensePosition::Head, Phase::Training, {{"k", 16}}),
                        Slot::Head, env);
  const std::int32_t u = 17;
  const auto cands = knn(env.embedding_table, u, 16);
  std::map<std::int32_t, int> counts;
  TokenBatch x{std::vector<std::int32_t>(100, u), 1, 100};
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    for (auto id : d->on_tokens(x, {}, rng).ids) counts[id]++;
  }
  double chi2 = 0.0;
  const double expected = 10000.0 / 16.0;
  for (auto c : cands) chi2 += std::pow(counts[c] - expected, 2) / expected;
  int outside = 0;
  for (auto [id, n] : counts) {
    if (std::find(cands.begin(), cands.end(), id) == cands.end()) outside += n;
  }
  EXPECT_EQ(outside, 0);
  EXPECT_LT(chi2, 37.70);  // chi-square, 15 dof, p = 0.001
}

TEST(Mldp, SpecialTokensLengthAndRange) {
  const DefenseEnv env = toy_env();
  for (DefenseKind k : {DefenseKind::SanText, DefenseKind::CusText, DefenseKind::RanText}) {
    auto d = make_defense(spec(k, 0.01), Slot::Head, env);
    Rng rng(2);
    TokenBatch x{{0, 5, 0, 63, 1, 0}, 2, 3};
    TokenBatch y = d->on_tokens(x, {}, rng);
    ASSERT_EQ(y.ids.size(), x.ids.size());
    EXPECT_EQ(y.batch, 2u);
    for (std::size_t i = 0; i < x.ids.size(); ++i) {
      if (x.ids[i] == 0) EXPECT_EQ(y.ids[i], 0);
      else EXPECT_TRUE(y.ids[i] > 0 && y.ids[i] < 64);
    }
    TokenBatch bad{{1, 64}, 1, 2};
    EXPECT_THROW(d->on_tokens(bad, {}, rng), ConfigError);
  }
}

TEST(Mldp, SanTextPerturbsOnlyTheRareHalf) {
  const DefenseEnv env = toy_env();
  auto d = make_defense(spec(DefenseKind::SanText, 1e-9), Slot::Head, env);
  const TokenBatch x = all_tokens(64);
  std::vector<int> changed(64, 0);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    auto y = d->on_tokens(x, {}, rng);
    for (std::size_t v = 0; v < 64; ++v) changed[v] += y.ids[v] != x.ids[v];
  }
  // Ordinary ids 1..63 have counts 999..937; the 31 rarest are 33..63.
  for (std::size_t v = 0; v <= 32; ++v) EXPECT_EQ(changed[v], 0) << v;
  for (std::size_t v = 33; v < 64; ++v) EXPECT_GT(changed[v], 0) << v;
}

TEST(Mid, ClosedFormKl) {
  const std::size_t D = 5;
  Tensor mu0 = Tensor::zeros({3, D}), lv0 = Tensor::zeros({3, D});
  EXPECT_NEAR(ops::kl_std_normal(mu0, lv0).item(), 0.0, 1e-7);
  Tensor mu1 = Tensor::full({3, D}, 1.0f);
  EXPECT_NEAR(ops::kl_std_normal(mu1, lv0).item(), 0.5 * D, 1e-6);
}

TEST(Mid, ZeroLambdaGivesZeroRegAndKeepsShape) {
  auto d = make_defense(spec(DefenseKind::MID, 0.0), Slot::Head, toy_env());
  Rng rng(1);
  Tensor h = random_tensor({2, 3, 32}, rng);
  HookContext ctx{1, true};
  Tensor z = d->on_head_output(h, ctx, rng);
  EXPECT_EQ(z.shape(), h.shape());
  auto regs = d->take_regularizers();
  ASSERT_EQ(regs.size(), 1u);
  EXPECT_EQ(regs[0].item(), 0.0f);
  EXPECT_TRUE(d->take_regularizers().empty());
}

TEST(Mid, CombinedLossGradientMatchesFiniteDifference) {
  auto d = make_defense(spec(DefenseKind::MID, 0.5), Slot::Head, toy_env());
  Rng data(7);
  Tensor h = random_tensor({2, 2, 32}, data);
  Tensor w = random_tensor({2, 2, 32}, data);
  auto loss_at = [&] {
    Rng noise(11);
    HookContext ctx{1, true};
    Tensor z = d->on_head_output(h, ctx, noise);
    Tensor loss = ops::sum(ops::mul(z, w));
    for (const Tensor& r : d->take_regularizers()) loss = ops::add(loss, r);
    return loss;
  };
  auto params = d->parameters();
  for (Tensor& p : params) p.zero_grad();
  loss_at().backward();
  // mu and logvar layers: weights and biases.
  for (std::size_t pi : {2u, 3u, 5u}) {
    Tensor p = params[pi];
    const auto grad = std::vector<float>(p.grad().begin(), p.grad().end());
    for (std::size_t i : {0u, 7u, 31u}) {
      float& v = p.data()[i];
      const float keep = v;
      const float step = 1e-2f;
      v = keep + step;
      const double up = loss_at().item();
      v = keep - step;
      const double dn = loss_at().item();
      v = keep;
      const double fd = (up - dn) / (2 * step);
      EXPECT_NEAR(grad[i], fd, 2e-2 * std::max(1.0, std::abs(fd))) << pi << ":" << i;
    }
  }
}

TEST(Snd, HugeEtaIsNearIdentity) {
  auto d = make_defense(spec(DefenseKind::SnD, 1e12, DefensePosition::Head, Phase::Inference), Slot::Head,
                        toy_env());
  Rng rng(1);
  Tensor h = random_tensor({2, 3, 32}, rng);
  Tensor p = d->on_head_output(h, {}, rng);
  EXPECT_LT(testing::max_rel_diff(p.data(), h.data()), 1e-6);
}

TEST(Snd, DenoiserReducesHeldOutError) {
  const auto cfg = toy_config(Arch::EncoderOnly);
  const Transformer m = Transformer::build(cfg, 3);
  auto parts = partition(m, PartitionPlan::hbt(2, 2, 2));
  DefenseEnv env = toy_env(PartitionMode::HBT);
  DefenseStack stack({spec(DefenseKind::SnD, 10, DefensePosition::Head, Phase::Inference)}, env);
  const auto batches = testing::toy_batches(cfg, 4, 30, 4, 8);
  PrepareContext pc;
  pc.head = &parts[0];
  pc.returned_from_head = [&](const Tensor& h) { return parts[1].forward(h, {}); };
  pc.batches = &batches;
  pc.epochs = 4;
  pc.lr = 3e-3f;
  stack.prepare(pc);

  const auto held = testing::toy_batches(cfg, 99, 4, 4, 8);
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < held.size(); ++i) {
    HookContext ctx{i + 1, false, &held[i].x};
    Tensor h = parts[0].forward(held[i].x, {});
    Tensor clean = parts[1].forward(h, {});
    Tensor noisy = parts[1].forward(stack.apply_head_output(h, ctx), {});
    before += ops::mse_loss(noisy, clean).item();
    after += ops::mse_loss(stack.apply_returned(noisy, ctx), clean).item();
  }
  EXPECT_LT(after, before);
}

TEST(To, DisabledIsIdentityWithoutRegularizer) {
  auto d = make_defense(spec(DefenseKind::TO, 8, DefensePosition::Head, Phase::Training,
                             {{"epsilon_pert", 0.0}, {"w_away", 0.0}, {"w_close", 0.0}}),
                        Slot::Head, toy_env());
  Rng rng(1);
  Tensor e = random_tensor({2, 3, 32}, rng, 0.02);
  EXPECT_EQ(values(d->on_token_embeddings(e, {1, true}, rng)), values(e));
  EXPECT_TRUE(d->take_regularizers().empty());
}

TEST(To, RowsMoveAlongTheSegmentToOneCentroid) {
  auto d = make_defense(spec(DefenseKind::TO, 8), Slot::Head, toy_env());
  Rng data(2);
  Tensor e = random_tensor({1, 4, 32}, data, 0.02);
  Rng r1(10), r2(20);
  Tensor a = d->on_token_embeddings(e, {1, true}, r1);
  Tensor b = d->on_token_embeddings(e, {1, true}, r2);
  EXPECT_EQ(d->take_regularizers().size(), 2u);
  for (std::size_t row = 0; row < 4; ++row) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < 32; ++j) {
      const double da = a.data()[row * 32 + j] - e.data()[row * 32 + j];
      const double db = b.data()[row * 32 + j] - e.data()[row * 32 + j];
      dot += da * db;
      na += da * da;
      nb += db * db;
    }
    EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-3) << row;
  }
}

TEST(To, ClusterCountClampedToVocab) {
  EXPECT_NO_THROW(make_defense(spec(DefenseKind::TO, 250), Slot::Head, toy_env()));
}

TEST(At, SmallLambdaDistortsMoreThanLargeLambda) {
  const auto cfg = toy_config(Arch::EncoderOnly);
  const Transformer m = Transformer::build(cfg, 3);
  auto parts = partition(m, PartitionPlan::ht(2, 4));
  const auto batches = testing::toy_batches(cfg, 4, 20, 4, 8);
  auto distortion = [&](double lambda) {
    DefenseStack stack({spec(DefenseKind::AT, lambda, DefensePosition::Head, Phase::Inference)}, toy_env());
    PrepareContext pc;
    pc.head = &parts[0];
    pc.downstream_from_head = [&](const Tensor& h) { return parts[1].forward(h, {}); };
    pc.batches = &batches;
    pc.epochs = 2;
    pc.lr = 3e-3f;
    stack.prepare(pc);
    HookContext ctx{1, false, &batches[0].x};
    Tensor h = parts[0].forward(batches[0].x, {});
    return ops::mse_loss(stack.apply_head_output(h, ctx), h).item();
  };
  EXPECT_GT(distortion(0.001), distortion(5.0));
}

// Two-class logit gradients p - onehot give the label away by their sign.
// Trained against its own label adversary, the tail mapping should hide the
// sign when distortion is cheap and keep it when distortion is expensive.
TEST(At, TailMappingHidesGradientSignWhenDistortionIsCheap) {
  auto sign_accuracy = [](double lambda) {
    DefenseStack stack({spec(DefenseKind::AT, lambda, DefensePosition::Tail)}, toy_env());
    Rng rng(9);
    double hits = 0, total = 0;
    for (int step = 0; step < 400; ++step) {
      std::vector<std::int32_t> y(32);
      std::vector<float> g(64);
      for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = rng.uniform() < 0.5 ? 0 : 1;
        const float p1 = static_cast<float>(0.1 + 0.8 * rng.uniform());
        g[2 * i] = (1.0f - p1) - (y[i] == 0 ? 1.0f : 0.0f);
        g[2 * i + 1] = p1 - (y[i] == 1 ? 1.0f : 0.0f);
      }
      const HookContext ctx{static_cast<std::uint64_t>(step), true, nullptr, &y};
      const Tensor out = stack.apply_boundary_gradient(Tensor({32, 2}, g), ctx);
      if (step < 300) continue;
      for (std::size_t i = 0; i < y.size(); ++i) {
        hits += ((out.data()[2 * i + 1] < 0) == (y[i] == 1)) ? 1 : 0;
        total += 1;
      }
    }
    return hits / total;
  };
  const double cheap = sign_accuracy(0.001);
  const double costly = sign_accuracy(5.0);
  EXPECT_GT(costly, 0.95);
  EXPECT_LT(cheap, costly - 0.2);
}

TEST(Stack, PhaseGatingAndParameters) {
  DefenseEnv env = toy_env(PartitionMode::HBT);
  DefenseStack stack({spec(DefenseKind::DP, 50, DefensePosition::Head, Phase::Inference),
                      spec(DefenseKind::MID, 0.1, DefensePosition::Both, Phase::Training),
                      spec(DefenseKind::AT, 1.0, DefensePosition::Head, Phase::Inference)},
                     env);
  EXPECT_EQ(stack.defenses().size(), 4u);
  // Only the training-phase MID instances contribute trainable parameters.
  EXPECT_EQ(stack.parameters().size(), 12u);

  DefenseStack dp({spec(DefenseKind::DP, 50, DefensePosition::Head, Phase::Inference)}, env);
  Rng rng(1);
  Tensor h = random_tensor({2, 3, 32}, rng);
  EXPECT_EQ(values(dp.apply_head_output(h, {1, true})), values(h));
  EXPECT_NE(values(dp.apply_head_output(h, {1, false})), values(h));
}

TEST(Stack, SlotsOnlyTouchTheirOwnPayloads) {
  const DefenseEnv env = toy_env(PartitionMode::HBT);
  Rng rng(1);
  Tensor h = random_tensor({2, 3, 32}, rng);
  Tensor g = random_tensor({2, 3, 32}, rng);
  TokenBatch x{{1, 2, 3, 4, 5, 6}, 2, 3};
  std::vector<std::int32_t> y{0, 1};
  for (DefenseKind k : {DefenseKind::DP, DefenseKind::SP, DefenseKind::AT, DefenseKind::MID}) {
    for (bool training : {true, false}) {
      const HookContext ctx{3, training, &x, &y};
      DefenseStack head({spec(k, strength_grid(k).back(), DefensePosition::Head)}, env);
      EXPECT_EQ(values(head.apply_boundary_gradient(g, ctx)), values(g)) << to_string(k);
      DefenseStack tail({spec(k, strength_grid(k).back(), DefensePosition::Tail)}, env);
      EXPECT_EQ(tail.apply_tokens(x, ctx).ids, x.ids);
      EXPECT_EQ(values(tail.apply_token_embeddings(h, ctx)), values(h)) << to_string(k);
      EXPECT_EQ(values(tail.apply_head_output(h, ctx)), values(h)) << to_string(k);
    }
  }
}

TEST(Stack, DeterministicStreams) {
  const DefenseEnv env = toy_env();
  Rng rng(1);
  Tensor h = random_tensor({2, 3, 32}, rng);
  DefenseStack a({spec(DefenseKind::DP, 50)}, env), b({spec(DefenseKind::DP, 50)}, env);
  const HookContext c1{1, true}, c2{2, true};
  EXPECT_EQ(values(a.apply_head_output(h, c1)), values(b.apply_head_output(h, c1)));
  EXPECT_NE(values(a.apply_head_output(h, c1)), values(a.apply_head_output(h, c2)));
}

}  // namespace
}  // namespace splitbench
