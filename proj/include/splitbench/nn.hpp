// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

// Small feed-forward networks for defense and attack models.

#pragma once

#include <string>
#include <vector>

#include "splitbench/model.hpp"
#include "splitbench/rng.hpp"

namespace splitbench {

/// in -> hidden -> out with a GELU in between. With `zero_last`, the output
/// layer starts at zero.
struct Mlp {
  Linear l1;
  Linear l2;

  static Mlp make(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng rng, bool zero_last = false);
  Tensor forward(const Tensor& x) const;
  Tensor hidden(const Tensor& x) const;
  std::vector<Tensor> parameters() const;
};

/// Dense layer with N(0, 1/in) weights and zero bias.
Linear make_dense(const std::string& name, std::size_t in, std::size_t out, Rng rng, bool zero = false);

}  // namespace splitbench
