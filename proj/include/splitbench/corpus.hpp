// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/model.hpp"
#include "splitbench/protocol.hpp"

namespace splitbench {

inline constexpr std::int32_t kClsToken = 1;  // also BOS for language modelling
inline constexpr std::int32_t kUnkToken = 2;
inline constexpr std::int32_t kFirstOrdinaryToken = 3;

enum class CorpusKind { SyntheticClassification, SyntheticLm, Ingested };

struct Sample {
  std::vector<std::int32_t> ids;  // padded to the corpus sequence length
  std::int32_t label = -1;        // classification only
};

/// Task specification, as written in an experiment config's "task" block.
struct TaskSpec {
  CorpusKind kind = CorpusKind::SyntheticClassification;
  std::size_t n = 2000;
  int classes = 2;
  double balance = 0.5;  // share of class 0; the rest is split evenly
  int vocab = 128;
  std::size_t seq_len = 16;
  std::uint64_t seed = 0;
  double aux_fraction = 0.1;  // of the training split, held by the attacker
  // Ingested text only.
  std::string path;
  std::string tokenizer = "char";  // or "word"
  bool classification = true;      // label<TAB>text lines
  std::vector<std::string> labels; // declared label set; empty = collect from the file

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
  bool is_classification() const { return kind == CorpusKind::SyntheticClassification || (kind == CorpusKind::Ingested && classification); }
};

struct Corpus {
  TaskSpec spec;
  int vocab_size = 0;
  std::size_t seq_len = 0;
  int num_classes = 0;  // 0 for language modelling
  std::vector<Sample> train, val, test, aux;
  std::vector<std::uint64_t> token_counts;  // over train, per id
  std::vector<std::string> label_names;

  bool classification() const { return num_classes > 0; }
  /// Batches in the given order; targets are labels or next tokens.
  std::vector<Batch> batches(const std::vector<Sample>& samples, std::size_t batch_size,
                             const std::vector<std::size_t>* order = nullptr) const;
  std::vector<TokenBatch> token_batches(const std::vector<Sample>& samples, std::size_t batch_size) const;
};

/// Builds the corpus a task spec describes; identical for identical specs.
/// Ingest errors name the file and line.
Corpus make_corpus(const TaskSpec& spec);

std::string to_string(CorpusKind k);
CorpusKind parse_corpus_kind(const std::string& s);

}  // namespace splitbench
