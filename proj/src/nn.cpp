// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/nn.hpp"

#include <cmath>

#include "splitbench/ops.hpp"

namespace splitbench {

Linear make_dense(const std::string& name, std::size_t in, std::size_t out, Rng rng, bool zero) {
  Linear l;
  l.name = name;
  std::vector<float> w(in * out, 0.0f);
  if (!zero) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (float& v : w) v = static_cast<float>(rng.normal() * sd);
  }
  l.weight = Tensor({in, out}, std::move(w), true);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Mlp Mlp::make(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng rng,
              bool zero_last) {
  return {make_dense(name + ".l1", in, hidden, rng.split("l1")),
          make_dense(name + ".l2", hidden, out, rng.split("l2"), zero_last)};
}

Tensor Mlp::hidden(const Tensor& x) const { return ops::gelu(l1.forward(x, {})); }

Tensor Mlp::forward(const Tensor& x) const { return l2.forward(hidden(x), {}); }

std::vector<Tensor> Mlp::parameters() const { return {l1.weight, l1.bias, l2.weight, l2.bias}; }

}  // namespace splitbench
