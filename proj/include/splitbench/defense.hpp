// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/model.hpp"
#include "splitbench/partition.hpp"
#include "splitbench/rng.hpp"
#include "splitbench/tensor.hpp"

namespace splitbench {

enum class DefenseKind { DP, SP, SanText, CusText, RanText, SnD, AT, MID, TO };
enum class DefensePosition { Head, Tail, Both };
enum class Phase { Inference, Training };
enum class Slot { Head, Tail };

std::string to_string(DefenseKind k);
std::string to_string(DefensePosition p);
std::string to_string(Phase p);
std::string to_string(Slot s);
DefenseKind parse_defense_kind(const std::string& s);
DefensePosition parse_defense_position(const std::string& s);
Phase parse_phase(const std::string& s);

/// True for defenses that can only be mounted at the model head.
bool head_only(DefenseKind k);
/// True for defenses that train their own networks.
bool learning_based(DefenseKind k);
/// Strength grid from weakest to strongest.
std::vector<double> strength_grid(DefenseKind k);
/// Name of the strength hyperparameter (epsilon, r, eta, lambda, n_cluster).
std::string strength_name(DefenseKind k);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::DP;
  DefensePosition position = DefensePosition::Head;
  Phase phase = Phase::Training;
  double strength = 0.0;
  nlohmann::json extras = nlohmann::json::object();

  /// Throws ConfigError on a bad position or strength.
  void validate() const;
  template <class T>
  T extra(const std::string& key, T fallback) const {
    return extras.contains(key) ? extras.at(key).get<T>() : fallback;
  }

  nlohmann::json to_json() const;
  static DefenseSpec from_json(const nlohmann::json& j);
};

/// Per-call information passed to hooks.
struct HookContext {
  std::uint64_t step = 0;
  bool training = false;               // a training step (as opposed to a forward-only pass)
  const TokenBatch* tokens = nullptr;  // the Data Party's original input
  const std::vector<std::int32_t>* targets = nullptr;  // labels, training steps only
};

/// Everything a defense may learn from when it is built. All of it is Data
/// Party knowledge.
struct DefenseEnv {
  TransformerConfig model;
  PartitionMode mode = PartitionMode::HT;
  Tensor embedding_table;                 // pretrained token embeddings [V, D]
  std::vector<std::uint64_t> token_counts;  // corpus frequency per token id
  std::vector<std::int32_t> special_tokens{kPadToken};  // never perturbed
  std::uint64_t seed = 0;
};

struct Batch;

/// Inputs for defenses that train before an inference deployment, or that
/// need a fitted helper network (SnD denoiser).
struct PrepareContext {
  const ModelSlice* head = nullptr;
  /// Differentiable local stand-in for the rest of the pretrained pipeline:
  /// maps the head-boundary tensor to task logits.
  std::function<Tensor(const Tensor&)> downstream_from_head;
  /// Maps a head-boundary tensor to what the Data Party receives back
  /// (HT: logits; HBT: body output).
  std::function<Tensor(const Tensor&)> returned_from_head;
  const std::vector<Batch>* batches = nullptr;
  int epochs = 1;
  float lr = 1e-3f;
};

class Defense {
 public:
  Defense(DefenseSpec spec, Slot slot) : spec_(std::move(spec)), slot_(slot) {}
  virtual ~Defense() = default;

  const DefenseSpec& spec() const { return spec_; }
  Slot slot() const { return slot_; }
  /// Training-phase defenses act on every pass of the fine-tuned system;
  /// inference-phase defenses act only on forward-only passes.
  bool fires(bool training_step) const {
    return spec_.phase == Phase::Training || !training_step;
  }

  virtual TokenBatch on_tokens(const TokenBatch& x, const HookContext&, Rng&) { return x; }
  virtual Tensor on_token_embeddings(const Tensor& e, const HookContext&, Rng&) { return e; }
  virtual Tensor on_head_output(const Tensor& h, const HookContext&, Rng&) { return h; }
  virtual Tensor on_returned(const Tensor& r, const HookContext&, Rng&) { return r; }
  virtual Tensor on_boundary_gradient(const Tensor& g, const HookContext&, Rng&) { return g; }

  /// Loss terms produced by the last forward, cleared on read.
  virtual std::vector<Tensor> take_regularizers() { return {}; }
  /// Trainable defense parameters, updated alongside the Data Party's slices.
  virtual std::vector<Tensor> parameters() const { return {}; }
  /// Called after the Data Party applied its updates (adversary steps etc).
  virtual void after_update(const HookContext&, Rng&) {}
  virtual void on_epoch(const ModelSlice& /*head*/) {}
  virtual bool needs_prepare() const { return false; }
  virtual void prepare(const PrepareContext&, Rng&) {}

 private:
  DefenseSpec spec_;
  Slot slot_;
};

std::unique_ptr<Defense> make_defense(const DefenseSpec& spec, Slot slot, const DefenseEnv& env);

/// The Data Party's mounted defenses. A Both-position spec yields one
/// independent instance per slot. Hooks of a slot only ever see payloads of
/// that slot.
class DefenseStack {
 public:
  DefenseStack() = default;
  DefenseStack(const std::vector<DefenseSpec>& specs, const DefenseEnv& env);

  bool empty() const { return defenses_.empty(); }
  bool has(Slot slot) const;

  TokenBatch apply_tokens(const TokenBatch& x, const HookContext& ctx);
  Tensor apply_token_embeddings(const Tensor& e, const HookContext& ctx);
  Tensor apply_head_output(const Tensor& h, const HookContext& ctx);
  Tensor apply_returned(const Tensor& r, const HookContext& ctx);
  Tensor apply_boundary_gradient(const Tensor& g, const HookContext& ctx);

  std::vector<Tensor> take_regularizers();
  std::vector<Tensor> parameters() const;
  void after_update(const HookContext& ctx);
  void on_epoch(const ModelSlice& head);
  void prepare(const PrepareContext& ctx);

  const std::vector<std::unique_ptr<Defense>>& defenses() const { return defenses_; }

 private:
  Rng stream(std::size_t i, const HookContext& ctx, const char* hook) const;

  std::vector<std::unique_ptr<Defense>> defenses_;
  Rng base_{0};
};

// Stand-alone perturbation primitives (also used by the attacks' noise models).

/// Clips each last-dimension row to L1 norm <= clip, then adds Laplace noise
/// of scale 2 * clip / epsilon. epsilon = +inf skips the noise.
Tensor dp_perturb(const Tensor& t, double epsilon, double clip, Rng& rng);
/// Zeroes the floor(rate% * numel) smallest-magnitude entries.
Tensor sp_sparsify(const Tensor& t, double rate_percent);

}  // namespace splitbench
