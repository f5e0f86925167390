// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splitbench/defense.hpp"
#include "splitbench/model.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/partition.hpp"
#include "splitbench/session.hpp"

namespace splitbench {

enum class Scope { Full, Local };
enum class Method { Vanilla, LoRA };

struct FinetuneStrategy {
  Scope scope = Scope::Full;
  Method method = Method::Vanilla;

  std::string name() const;  // e.g. "Full-LoRA"
  static FinetuneStrategy parse(const std::string& s);
  bool operator==(const FinetuneStrategy&) const = default;
};

/// Inputs plus targets. Classification: one label per row. Language
/// modelling: batch * seq next-token targets with -100 at ignored positions.
struct Batch {
  TokenBatch x;
  std::vector<std::int32_t> targets;
};

inline constexpr std::int32_t kIgnoreTarget = -100;

/// Next-token targets for `x`, ignoring padding.
std::vector<std::int32_t> next_token_targets(const TokenBatch& x);

/// Task loss for logits against batch targets.
Tensor task_loss(const Tensor& logits, const std::vector<std::int32_t>& targets);

/// Dropout stream for one training step; identical for split and monolithic runs.
Rng step_stream(std::uint64_t seed, std::uint64_t step);

/// Applies a fine-tuning strategy. Data slices: HT {Head}; HBT {Head, Tail}.
/// Model slices: HT {Tail}; HBT {Body}.
void configure_trainability(const std::vector<ModelSlice*>& data_slices,
                            const std::vector<ModelSlice*>& model_slices,
                            const FinetuneStrategy& strategy, const LoraOptions& lora,
                            std::uint64_t seed);

struct PartyOptions {
  OptimizerKind optimizer = OptimizerKind::Adam;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

struct StepResult {
  double loss = 0.0;
  Tensor logits;  // detached
};

class DataParty {
 public:
  /// `tail` is required for HBT and must be empty for HT.
  DataParty(PartitionMode mode, ModelSlice head, std::optional<ModelSlice> tail, Endpoint& endpoint,
            PartyOptions options, DefenseStack* defenses = nullptr);

  void start(std::uint64_t config_digest);
  StepResult train_step(const Batch& batch, std::uint64_t step);
  /// Forward-only pass; returns the logits the Data Party ends up with.
  Tensor infer(const TokenBatch& x, std::uint64_t step);
  void finish();

  ModelSlice& head() { return head_; }
  ModelSlice* tail() { return tail_ ? &*tail_ : nullptr; }
  Endpoint& endpoint() { return endpoint_; }
  DefenseStack* defenses() { return defenses_; }

 private:
  Tensor head_forward(const TokenBatch& x, const HookContext& ctx, const ForwardContext& fctx);
  void set_mode(bool training, std::uint64_t step);
  void count_tokens(const TokenBatch& x);

  PartitionMode mode_;
  ModelSlice head_;
  std::optional<ModelSlice> tail_;
  Endpoint& endpoint_;
  PartyOptions options_;
  DefenseStack* defenses_;
  std::unique_ptr<Optimizer> head_opt_;
  std::unique_ptr<Optimizer> tail_opt_;
  std::unique_ptr<Optimizer> defense_opt_;
  std::optional<bool> mode_sent_;
};

class ModelParty {
 public:
  ModelParty(PartitionMode mode, ModelSlice slice, Endpoint& endpoint, PartyOptions options);

  /// Handshake, then serve requests until the Data Party sends Shutdown.
  void serve(std::uint64_t config_digest);

  const ModelSlice& slice() const { return slice_; }

 private:
  PartitionMode mode_;
  ModelSlice slice_;
  Endpoint& endpoint_;
  PartyOptions options_;
  std::unique_ptr<Optimizer> opt_;
};

}  // namespace splitbench
