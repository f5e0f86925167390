// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

// Attacks of an honest-but-curious Model Party. Every entry point takes only
// what that party legitimately holds: its received tensors, white-box copies
// of model weights, and declared auxiliary data.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/defense.hpp"
#include "splitbench/model.hpp"
#include "splitbench/nn.hpp"
#include "splitbench/rng.hpp"
#include "splitbench/tensor.hpp"

namespace splitbench {

enum class AttackKind { VMI, RMI, BiSR, BLI, NS };

std::string to_string(AttackKind k);
AttackKind parse_attack_kind(const std::string& s);
/// Model inversion (as opposed to label inference).
bool is_mia(AttackKind k);

struct AttackSpec {
  AttackKind kind = AttackKind::VMI;
  Phase phase = Phase::Inference;
  int epochs = 100;
  double lr = 0.01;
  double temperature = 0.5;  // RMI
  int aux_samples = 100;     // BiSR
  int pretrain_epochs = 20;  // BiSR
  int max_samples = 32;      // MIA targets per run

  /// Defaults for the attack's optimisation schedule.
  static AttackSpec defaults(AttackKind k, Phase phase = Phase::Inference);
  void validate() const;

  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
};

struct InversionResult {
  std::vector<std::vector<std::int32_t>> recovered;  // per sample, one id per position
  std::vector<double> loss_trace;                    // optimisation loss per epoch
  bool failed = false;
  std::string failure;
};

/// Per position, the table row with the largest cosine similarity; ties go to
/// the lowest id. `emb` is [rows, D]; returns `rows` ids.
std::vector<std::int32_t> decode_by_cosine(const Tensor& emb, const Tensor& table);

/// Embedding-space inversion: optimises free token embeddings so the head
/// reproduces `observed` [B, S, D], then decodes by cosine similarity.
/// `init` replaces the gaussian start when given.
InversionResult vmi(const Tensor& observed, const ModelSlice& head, int epochs, double lr, Rng rng,
                    const std::optional<Tensor>& init = std::nullopt);

/// Relaxed-token inversion: optimises logits z [B, S, V]; the head sees
/// softmax(z / temperature) E. Decodes argmax z.
InversionResult rmi(const Tensor& observed, const ModelSlice& head, int epochs, double lr,
                    double temperature, Rng rng, const std::optional<Tensor>& init_logits = std::nullopt);

/// Perturbation the attacker assumes was applied to the head output.
using NoiseModel = std::function<Tensor(const Tensor&, Rng&)>;

/// Maps head-boundary tensors back to token embeddings, position by position.
struct InversionNet {
  Mlp net;
  Tensor forward(const Tensor& h) const;
};

/// Noise-aware pretraining of the inversion network on auxiliary inputs.
InversionNet pretrain_inversion(const ModelSlice& head, const std::vector<TokenBatch>& aux,
                                const NoiseModel& noise, int epochs, double lr, Rng rng);

/// Inversion network pretraining followed by VMI started from its output.
InversionResult bisr(const Tensor& observed, const ModelSlice& head, const std::vector<TokenBatch>& aux,
                     const NoiseModel& noise, int pretrain_epochs, int epochs, double lr, Rng rng);

struct LabelResult {
  std::vector<std::int32_t> predicted;
  bool degenerate = false;
};

/// Labelled gradients the attacker synthesises with its white-box copy.
struct ShadowPair {
  std::vector<float> gradient;  // one sample, flattened
  std::int32_t label = 0;
};

/// Learns gradient -> label from shadow pairs, then labels each observed
/// per-sample gradient. Gradients are compared by direction.
LabelResult bli(const std::vector<std::vector<float>>& observed, const std::vector<ShadowPair>& shadow,
                int num_classes, int epochs, double lr, Rng rng);

/// Shadow pairs for every sample of one observed batch: the gradient each
/// candidate label would produce at the boundary. `returned` is what the
/// Model Party sent back (HT: logits [B, C]; HBT: body output [B, S, D]);
/// `tail` is the white-box copy of the Data Party's tail (HBT only).
std::vector<ShadowPair> bli_shadow_pairs(const Tensor& returned, const ModelSlice* tail, int num_classes);

/// Norm scoring: 2-means over per-sample gradient norms; the larger-norm
/// cluster is labelled positive (1). All-equal norms are degenerate and
/// labelled negative.
LabelResult ns(const std::vector<double>& norms);

/// Splits a batch-level boundary gradient into per-sample flattened rows.
std::vector<std::vector<float>> per_sample_rows(const Tensor& g);

}  // namespace splitbench
