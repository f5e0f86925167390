// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splitbench/config.hpp"
#include "splitbench/corpus.hpp"
#include "splitbench/model.hpp"
#include "splitbench/records.hpp"
#include "splitbench/wire.hpp"

namespace splitbench {

struct RunnerOptions {
  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir;  // default: <out_dir>/cache
  /// standalone: parties on threads over an in-process channel.
  /// distributed: parties over TCP; loopback in one process unless `listen`
  /// (Model Party only) or `connect` (Data Party only) is set.
  std::string mode = "standalone";
  std::string listen;
  std::string connect;
  /// How long a connecting Data Party keeps retrying before giving up.
  std::chrono::milliseconds connect_timeout = std::chrono::minutes(30);
  std::ostream* log = nullptr;
  bool write_outputs = true;
};

/// What one cell produced. The kept transcript segments are what the
/// attacks looked at.
struct CellOutcome {
  RunRecord record;
  RunTiming timing;
  std::vector<ProtocolMessage> archived;  // full: every frame; attack: what the attacks read
};

/// Monolithic training helpers, shared with tests.
/// Masked-token (encoder) or next-token (decoder) pretraining of a model
/// with a language-modelling head on the corpus's training split.
Transformer pretrain_language_model(const TransformerConfig& lm_config, const Corpus& corpus,
                                    const TrainingOptions& opts);
/// Full fine-tuning of every parameter on the training split for `epochs`.
void train_monolithic(Transformer& model, const Corpus& corpus, std::size_t batch_size, double lr, int epochs,
                      std::uint64_t seed);
/// Main-task performance of a monolithic model on `samples`.
double evaluate_monolithic(const Transformer& model, const Corpus& corpus, const std::vector<Sample>& samples,
                           std::size_t batch_size);

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig config, RunnerOptions options);
  ~ExperimentRunner();

  /// Runs every cell from the Data Party side (and the Model Party too,
  /// unless connecting to a separate process), persisting records.
  std::vector<RunRecord> run();
  /// Model Party role for a separate Data Party process: serves one session
  /// per cell in the same order.
  void serve();

  /// Single cell, for tests; the Model Party runs in-process.
  CellOutcome run_cell(const Cell& cell);

  const ExperimentConfig& config() const { return config_; }
  const Corpus& corpus();
  const TransformerConfig& model_config();
  /// Starting model of a cell: the deployed task model for inference
  /// pipelines, the pretrained backbone with a fresh task head otherwise.
  Transformer start_model(std::uint64_t seed);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ExperimentConfig config_;
  RunnerOptions options_;
};

}  // namespace splitbench
