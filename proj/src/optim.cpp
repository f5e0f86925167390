// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/optim.hpp"

#include <cmath>

#include "splitbench/errors.hpp"

namespace splitbench {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("optimizer: unknown kind '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i];
    if (p.requires_grad() && !p.has_grad()) {
      throw Error("optimizer: trainable parameter #" + std::to_string(i) + " of shape " +
                  shape_str(p.shape()) + " has no gradient");
    }
  }
  begin_step();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].requires_grad()) update(i, params_[i]);
  }
  zero_grad();
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Sgd::update(std::size_t, Tensor& p) {
  auto d = p.data();
  auto g = p.grad();
  const float lr = static_cast<float>(lr_);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
}

Adam::Adam(std::vector<Tensor> params, double lr, AdamOptions opts)
    : Optimizer(std::move(params), lr), opts_(opts) {
  m_.resize(params_.size());
  v_.resize(params_.size());
}

void Adam::update(std::size_t index, Tensor& p) {
  auto d = p.data();
  auto g = p.grad();
  auto& m = m_[index];
  auto& v = v_[index];
  if (m.empty()) {
    m.assign(d.size(), 0.0f);
    v.assign(d.size(), 0.0f);
  }
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < d.size(); ++i) {
    m[i] = static_cast<float>(opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i]);
    v[i] = static_cast<float>(opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    d[i] = static_cast<float>(d[i] - lr_ * mhat / (std::sqrt(vhat) + opts_.eps));
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::vector<Tensor> params, double lr) {
  if (kind == OptimizerKind::Sgd) return std::make_unique<Sgd>(std::move(params), lr);
  return std::make_unique<Adam>(std::move(params), lr);
}

}  // namespace splitbench
