// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/attacks.hpp"
#include "splitbench/corpus.hpp"
#include "splitbench/defense.hpp"
#include "splitbench/model.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/partition.hpp"
#include "splitbench/protocol.hpp"

namespace splitbench {

/// mia: inference deployment with head defenses. lia: fine-tuning with tail
/// defenses. joint: fine-tuning with defenses at both ends.
enum class Pipeline { Mia, Lia, Joint };
std::string to_string(Pipeline p);
Pipeline parse_pipeline(const std::string& s);

/// Transformer shape without the corpus-derived fields.
struct ModelShape {
  Arch arch = Arch::EncoderOnly;
  int d_model = 64;
  int n_layers = 6;
  int n_heads = 4;
  int d_ff = 128;

  TransformerConfig resolve(const Corpus& corpus) const;
  nlohmann::json to_json() const;
  static ModelShape from_json(const nlohmann::json& j);
};

struct TrainingOptions {
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 64;
  double lr = 1e-3;
  int epochs = 3;
  int patience = 3;  // epochs without a validation gain before stopping
  OptimizerKind optimizer = OptimizerKind::Adam;
  // Pretraining of the shared starting checkpoint.
  int pretrain_epochs = 3;
  double pretrain_lr = 1e-3;
  std::uint64_t pretrain_seed = 0;
  double mask_rate = 0.15;  // encoder pretraining
  int deploy_epochs = 3;    // task training of the inference-deployed model
  // Defense pre-training before inference deployments.
  int defense_epochs = 1;
  double defense_lr = 1e-3;

  nlohmann::json to_json() const;
  static TrainingOptions from_json(const nlohmann::json& j);
};

struct MetricOptions {
  double beta = 0.5;
  std::map<std::string, double> weights;  // per attack type; empty = equal over present types

  nlohmann::json to_json() const;
  static MetricOptions from_json(const nlohmann::json& j);
};

enum class SweepAxis { Strength, NHead };
std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepSpec {
  SweepAxis axis = SweepAxis::Strength;
  std::vector<double> values;  // empty strength sweep = the defense's grid

  nlohmann::json to_json() const;
  static SweepSpec from_json(const nlohmann::json& j);
};

enum class ArchiveMode { None, Attack, Full };

struct TransportOptions {
  std::string mode = "standalone";  // or "distributed"
  std::string listen;
  std::string connect;

  nlohmann::json to_json() const;
  static TransportOptions from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskSpec task;
  ModelShape model;
  PartitionPlan partition = PartitionPlan::ht(2, 4);
  FinetuneStrategy strategy;
  LoraOptions lora;
  Pipeline pipeline = Pipeline::Mia;
  std::vector<DefenseSpec> defenses;
  std::vector<AttackSpec> attacks;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::optional<SweepSpec> sweep;
  TrainingOptions training;
  MetricOptions metrics;
  ArchiveMode archive = ArchiveMode::Attack;
  TransportOptions transport;

  /// Structural checks, including the pipeline / position / phase pairing.
  void validate() const;
  nlohmann::json to_json(bool with_transport = true) const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Hash of the canonical JSON without the transport section.
  std::uint64_t digest() const;
  std::string mp_metric() const;
};

std::string hex64(std::uint64_t v);

/// One seed at one sweep point. Baseline cells run the same partition with
/// no defenses and supply MP*.
struct Cell {
  std::size_t index = 0;
  std::string id;
  std::uint64_t seed = 0;
  bool baseline = false;
  PartitionPlan plan;
  std::vector<DefenseSpec> defenses;
  std::optional<double> sweep_value;

  /// Handshake digest: the config digest bound to this cell.
  std::uint64_t session_digest(std::uint64_t config_digest) const;
};

/// Cells in execution order. Each baseline precedes the first cell that
/// needs it; a config without defenses yields baselines only.
std::vector<Cell> enumerate_cells(const ExperimentConfig& config);

/// "DP(epsilon=50)", or "none".
std::string defense_label(const std::vector<DefenseSpec>& specs);

}  // namespace splitbench
