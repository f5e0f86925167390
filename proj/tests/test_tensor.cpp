// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "splitbench/errors.hpp"
#include "splitbench/ops.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/rng.hpp"
#include "support/gradcheck.hpp"

namespace splitbench {
namespace {

TEST(Tensor, RejectsLengthMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
}

TEST(Ops, MatmulIdentity) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor c = ops::matmul(a, eye);
  EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Ops, ShapeErrorNamesBothShapes) {
  Tensor a({2, 3}, std::vector<float>(6));
  Tensor b({2, 3}, std::vector<float>(6));
  try {
    ops::matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3] and [2,3]"), std::string::npos) << msg;
  }
}

TEST(Ops, RejectsNonFinite) {
  Tensor a({2}, {1.0f, std::nanf("")});
  EXPECT_THROW(ops::exp(a), NumericError);
}

TEST(Ops, SoftmaxUniform) {
  Tensor s = ops::softmax(Tensor({3}, {0, 0, 0}));
  for (float v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Ops, CrossEntropySaturated) {
  std::vector<std::int32_t> y{0};
  Tensor loss = ops::cross_entropy(Tensor({1, 2}, {10, -10}), y);
  const double expected = std::log1p(std::exp(-20.0));
  EXPECT_NEAR(loss.item(), expected, 1e-12);
  EXPECT_NEAR(expected, 2.06e-9, 0.01e-9);
}

TEST(Ops, CrossEntropyAllIgnoredThrows) {
  std::vector<std::int32_t> y{-100};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 2}, {1, 2}), y), Error);
}

TEST(Autograd, SumGivesOnes) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ops::sum(x).backward();
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Autograd, HalfSquaredNorm) {
  Tensor x({2}, {3, -4}, true);
  ops::scale(ops::sum_squares(x), 0.5f).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 3.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], -4.0f);
}

TEST(Autograd, AccumulatesAcrossUses) {
  Tensor x({1}, {2}, true);
  ops::sum(ops::add(ops::mul(x, x), x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 5.0f);
}

TEST(Autograd, NonScalarBackwardRejected) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(ops::scale(x, 2.0f).backward(), Error);
}

TEST(Autograd, SharedSubgraphVisitedOnce) {
  Tensor x({3}, {0.5f, -1.0f, 2.0f}, true);
  Tensor e = ops::exp(x);
  ops::sum(ops::add(e, e)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * std::exp(x.data()[i]), 1e-5);
}

TEST(Autograd, FiniteDifferences) {
  Rng rng(7);
  for (const auto& [name, make] : testing::grad_cases()) {
    for (int trial = 0; trial < 10; ++trial) {
      Rng r = rng.split(name).split(static_cast<std::uint64_t>(trial));
      testing::GradTrial t = make(r);
      auto res = testing::run_trial(t, r);
      EXPECT_LT(res.forward_rel, 1e-5) << name << " trial " << trial;
      EXPECT_LT(res.grad_rel, 1e-4) << name << " trial " << trial;
    }
  }
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto v = testing::random_vec(rng, 40, 5.0);
  Tensor s = ops::softmax(Tensor({8, 5}, std::vector<float>(v.begin(), v.end())));
  for (std::size_t r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) sum += s.data()[r * 5 + j];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Ops, LayerNormMoments) {
  Rng rng(4);
  auto v = testing::random_vec(rng, 64, 3.0);
  Tensor y = ops::layer_norm(Tensor({4, 16}, std::vector<float>(v.begin(), v.end())),
                             Tensor::full({16}, 1.0f), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.data()[r * 16 + j];
    mu /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += std::pow(y.data()[r * 16 + j] - mu, 2);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(Ops, DropoutIdentityAtInference) {
  Rng rng(1);
  Tensor x({4}, {1, 2, 3, 4});
  Tensor y = ops::dropout(x, 0.5f, rng, false);
  EXPECT_EQ(y.node(), x.node());
}

TEST(Ops, Deterministic) {
  auto run = [] {
    Rng rng(11);
    auto v = testing::random_vec(rng, 64);
    Tensor x({2, 4, 8}, std::vector<float>(v.begin(), v.end()), true);
    Rng d(5);
    Tensor y = ops::sum_squares(ops::dropout(ops::attention(x, x, x, 2, true), 0.2f, d, true));
    y.backward();
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Optim, SgdStep) {
  Tensor p({1}, {1.0f}, true);
  p.mutable_grad()[0] = 0.5f;
  Sgd opt({p}, 0.1f);
  opt.step();
  EXPECT_FLOAT_EQ(p.data()[0], 0.95f);
  EXPECT_FALSE(p.has_grad());
}

TEST(Optim, SgdZeroGradNoChange) {
  Tensor p({1}, {1.0f}, true);
  p.mutable_grad()[0] = 0.0f;
  Sgd opt({p}, 0.1f);
  opt.step();
  EXPECT_EQ(p.data()[0], 1.0f);
}

TEST(Optim, AdamFirstStep) {
  Tensor p({1}, {0.0f}, true);
  p.mutable_grad()[0] = 1.0f;
  Adam opt({p}, 0.1f);
  opt.step();
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.data()[0], -0.1 / (1.0 + 1e-8), 1e-7);
}

TEST(Optim, MissingGradRejected) {
  Tensor p({1}, {0.0f}, true);
  Sgd opt({p}, 0.1f);
  EXPECT_THROW(opt.step(), Error);
}

TEST(Rng, SplitStreamsIndependentAndStable) {
  Rng a(42), b(42);
  EXPECT_EQ(a.split("x").next_u64(), b.split("x").next_u64());
  EXPECT_NE(a.split("x").next_u64(), a.split("y").next_u64());
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

}  // namespace
}  // namespace splitbench
