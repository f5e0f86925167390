// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "splitbench/rng.hpp"
#include "splitbench/tensor.hpp"

namespace splitbench::ops {

// Every op checks shapes and rejects non-finite inputs. The result records a
// backward closure only when at least one input requires grad.

/// a[..., K] x b[K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise with suffix broadcasting: b's shape must equal a's shape or a
/// trailing suffix of it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float s);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);

/// Softmax over the last dimension.
Tensor softmax(const Tensor& a);

/// Layer normalization over the last dimension with affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// Rows of `table` [V, D] gathered by `ids`; output shape ids_shape + [D].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// Multi-head scaled dot-product attention on [B, S, D] inputs. Causal
/// positions receive an additive -1e9 before the softmax.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 bool causal);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);

/// [B, S, D] -> [B, D] at sequence position `pos`.
Tensor select_position(const Tensor& x, std::size_t pos);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// Mean over rows of -log softmax(logits)[target]. Rows whose target equals
/// `ignore_index` are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index = -100);
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor l1_norm(const Tensor& x);
Tensor l2_norm(const Tensor& x);

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over the last dimension and
/// averaged over rows.
Tensor kl_std_normal(const Tensor& mu, const Tensor& logvar);

}  // namespace splitbench::ops
