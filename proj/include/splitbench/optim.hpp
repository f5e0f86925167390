// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "splitbench/tensor.hpp"

namespace splitbench {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Updates a fixed parameter list in place and clears its gradients.
///
/// Every parameter that requires grad must have one when `step` runs;
/// frozen parameters in the list are skipped.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, double lr);
  virtual ~Optimizer() = default;

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Tensor>& params() const { return params_; }

 protected:
  virtual void begin_step() {}
  virtual void update(std::size_t index, Tensor& p) = 0;
  std::vector<Tensor> params_;
  double lr_;
};

class Sgd final : public Optimizer {
 public:
  using Optimizer::Optimizer;

 protected:
  void update(std::size_t index, Tensor& p) override;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double lr, AdamOptions opts = {});
  std::uint64_t steps_taken() const { return t_; }

 protected:
  void begin_step() override { ++t_; }
  void update(std::size_t index, Tensor& p) override;

 private:
  AdamOptions opts_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::vector<Tensor> params, double lr);

}  // namespace splitbench
