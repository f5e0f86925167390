// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "splitbench/partition.hpp"
#include "splitbench/rng.hpp"
#include "splitbench/tensor.hpp"

namespace splitbench {

enum class Arch { EncoderOnly, DecoderOnly };
enum class TaskHeadKind { None, Classification, LanguageModel };

std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

struct TransformerConfig {
  Arch arch = Arch::EncoderOnly;
  int vocab_size = 64;
  int d_model = 32;
  int n_layers = 6;
  int n_heads = 4;
  int d_ff = 64;
  int max_seq_len = 16;
  std::optional<int> num_classes;  // unset: vocabulary head (masked-token for encoders)

  /// Throws ConfigError naming the offending field.
  void validate() const;
  TaskHeadKind task_head() const {
    return num_classes ? TaskHeadKind::Classification : TaskHeadKind::LanguageModel;
  }
  bool causal() const { return arch == Arch::DecoderOnly; }

  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
  bool operator==(const TransformerConfig&) const = default;
};

/// Token ids in row-major [batch, seq]. Id 0 is the padding token.
struct TokenBatch {
  std::vector<std::int32_t> ids;
  std::size_t batch = 0;
  std::size_t seq = 0;

  Shape shape() const { return {batch, seq}; }
  std::int32_t at(std::size_t b, std::size_t s) const { return ids[b * seq + s]; }
  TokenBatch row(std::size_t b) const;
};

inline constexpr std::int32_t kPadToken = 0;

/// Per-forward settings. `stream` seeds train-time dropout; each adapter
/// derives its own substream from its parameter name.
struct ForwardContext {
  bool training = false;
  Rng stream{0};
};

struct LoraOptions {
  std::vector<std::string> targets{"q", "v"};
  int rank = 4;
  float alpha = 32.0f;
  float dropout = 0.1f;

  nlohmann::json to_json() const;
  static LoraOptions from_json(const nlohmann::json& j);
};

/// Low-rank update (alpha / rank) * B A on a frozen weight. Stored in the
/// input-major layout used by Linear: `a` is [d_in, rank], `b` is
/// [rank, d_out], zero at init.
struct LoraAdapter {
  int rank = 0;
  float alpha = 0.0f;
  float dropout = 0.0f;
  Tensor a;
  Tensor b;

  float scaling() const { return alpha / static_cast<float>(rank); }
};

struct Linear {
  std::string name;
  Tensor weight;  // [d_in, d_out]
  Tensor bias;    // [d_out]
  std::optional<LoraAdapter> lora;

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  Tensor forward(const Tensor& x) const;
};

struct TransformerBlock {
  int index = 0;
  LayerNorm ln1;
  Linear q, k, v, o;
  LayerNorm ln2;
  Linear ff_in, ff_out;

  Tensor forward(const Tensor& x, int n_heads, bool causal, const ForwardContext& ctx) const;
  /// Projection by LoRA target id (q, k, v, o, ff_in, ff_out); nullptr when unknown.
  Linear* projection(const std::string& target);
};

struct Embeddings {
  Tensor token;     // [vocab, d_model]
  Tensor position;  // [max_seq_len, d_model]
};

struct TaskHead {
  TaskHeadKind kind = TaskHeadKind::None;
  LayerNorm ln;
  Linear proj;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

std::size_t count_elements(const NamedParams& params, bool trainable_only);

/// Full (monolithic) model.
class Transformer {
 public:
  static Transformer build(const TransformerConfig& config, std::uint64_t seed);

  const TransformerConfig& config() const { return config_; }
  Tensor forward(const TokenBatch& tokens, const ForwardContext& ctx) const;

  NamedParams named_parameters() const;
  std::size_t parameter_count() const { return count_elements(named_parameters(), false); }
  std::size_t trainable_parameter_count() const { return count_elements(named_parameters(), true); }

  void set_trainable(bool on);
  void attach_lora(const LoraOptions& opts, std::uint64_t seed);
  /// Copies values by name; every name of this model must be present.
  void load_state(const std::map<std::string, Tensor>& state);
  Transformer clone() const;

  Embeddings embeddings;
  std::vector<TransformerBlock> layers;
  TaskHead head;

 private:
  TransformerConfig config_;
};

enum class SliceRole { Head, Body, Tail };
std::string to_string(SliceRole r);

using SliceInput = std::variant<TokenBatch, Tensor>;

/// A contiguous run of layers plus, for the head, the embeddings and, for
/// the tail, the task head.
class ModelSlice {
 public:
  ModelSlice(SliceRole role, TransformerConfig config, std::optional<Embeddings> embeddings,
             std::vector<TransformerBlock> layers, std::optional<TaskHead> task_head, int layer_begin,
             int layer_end);

  SliceRole role() const { return role_; }
  bool has_embedding() const { return embeddings_.has_value(); }
  TaskHeadKind task_head() const { return task_head_ ? task_head_->kind : TaskHeadKind::None; }
  int layer_begin() const { return layer_begin_; }
  int layer_end() const { return layer_end_; }
  const TransformerConfig& config() const { return config_; }

  /// Head takes token ids; body and tail take [B, S, D] hidden states. Head
  /// and body return hidden states; tail returns logits.
  Tensor forward(const SliceInput& input, const ForwardContext& ctx) const;

  // Head-only pieces, exposed so token-embedding hooks and inversion attacks
  // can enter the head after the lookup.
  Tensor embed_tokens(const TokenBatch& tokens) const;
  Tensor forward_from_embeddings(const Tensor& token_embeddings, const ForwardContext& ctx) const;
  const Tensor& embedding_table() const;

  Tensor run_layers(const Tensor& hidden, const ForwardContext& ctx) const;
  Tensor apply_task_head(const Tensor& hidden, const ForwardContext& ctx) const;

  void set_trainable(bool on);
  void attach_lora(const LoraOptions& opts, std::uint64_t seed);
  bool has_lora() const;

  NamedParams named_parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  std::size_t parameter_count() const { return count_elements(named_parameters(), false); }
  std::size_t trainable_parameter_count() const { return count_elements(named_parameters(), true); }

  ModelSlice clone() const;

 private:
  SliceRole role_;
  TransformerConfig config_;
  std::optional<Embeddings> embeddings_;
  std::vector<TransformerBlock> layers_;
  std::optional<TaskHead> task_head_;
  int layer_begin_;
  int layer_end_;
};

/// Splits a model along layer boundaries. HT yields [Head, Tail]; HBT yields
/// [Head, Body, Tail]. Slices own deep copies of the parameters.
std::vector<ModelSlice> partition(const Transformer& model, const PartitionPlan& plan);

/// Head with the first `n_layers` layers; 0 gives the embedding-only head.
ModelSlice make_head(const Transformer& model, int n_layers);

}  // namespace splitbench
