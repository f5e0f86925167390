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

#include "splitbench/channel.hpp"

namespace splitbench {

inline constexpr int kRecordSchema = 1;

struct AttackOutcome {
  std::string kind;    // VMI, RMI, BiSR, BLI, NS
  std::string type;    // MIA or LIA
  std::string phase;   // training or inference
  std::string target;  // which messages were attacked
  std::optional<double> ap;
  double ap_ref = 0.0;
  std::optional<double> dcs;
  std::size_t samples = 0;
  bool failed = false;
  std::string failure;
};

/// Everything one cell produced, minus wall-clock timing (kept in a sidecar
/// so records are identical across reruns and transport modes).
struct RunRecord {
  int schema = kRecordSchema;
  std::string experiment;
  std::string cell;
  std::size_t index = 0;  // position in the experiment's cell order
  std::string config_digest;
  std::uint64_t seed = 0;
  bool baseline = false;
  std::string pipeline;
  std::string task;
  nlohmann::json partition;
  std::string strategy;
  nlohmann::json defenses = nlohmann::json::array();
  std::string defense_label = "none";
  std::string sweep_axis;  // empty when not sweeping
  std::optional<double> sweep_value;

  std::string status = "ok";  // or "failed"
  std::string error;
  int epochs_run = 0;
  std::string mp_metric;
  std::optional<double> mp;
  std::optional<double> mp_ref;
  double beta = 0.5;
  std::vector<AttackOutcome> attacks;
  std::map<std::string, double> t_dcs;
  std::map<std::string, double> weights;
  std::optional<double> c_dcs;

  nlohmann::json traffic;  // meter report without timing
  std::string transcript_digest;
  std::uint64_t tensor_messages = 0;
  std::string checkpoint;
  std::string transcript;
  std::string statistic = "mean over seeds";

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  std::string dump() const;  // canonical text, newline-terminated
};

struct RunTiming {
  std::string mode;  // standalone or distributed
  double total_s = 0.0;
  double session_s = 0.0;
  double attack_s = 0.0;
  nlohmann::json traffic;  // meter report including timing
  nlohmann::json to_json() const;
};

/// Fills DCS, T-DCS and C-DCS from MP, MP*, AP and AP*. Types with no
/// successful attack are left out; C-DCS uses the configured weights over
/// the present types, renormalised, or equal weights when none are set.
void score(RunRecord& r, const std::map<std::string, double>& configured_weights);

void write_record(const std::filesystem::path& dir, const RunRecord& r, const RunTiming* timing);
std::vector<RunRecord> load_records(const std::filesystem::path& dir);
/// Timing sidecars by cell id; cells without one are absent.
std::map<std::string, nlohmann::json> load_timings(const std::filesystem::path& dir);

/// One row per record and attack; the flat results table of a sweep.
std::string records_csv(const std::vector<RunRecord>& records);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one value
  std::size_t n = 0;
  bool low_confidence = false;  // single seed
};
Stat summarize(const std::vector<double>& values);

/// Per (defense, sweep point, partition) group: MP, per-attack AP and DCS,
/// T-DCS and C-DCS as mean and std over seeds.
struct Aggregate {
  std::string defense_label;
  std::string pipeline;
  std::string partition;
  std::optional<double> sweep_value;
  std::vector<double> strengths;  // one per defense, for marker sizes
  bool baseline = false;
  std::vector<std::uint64_t> seeds;
  Stat mp;
  std::map<std::string, Stat> ap;   // by attack kind
  std::map<std::string, Stat> dcs;  // by attack kind
  std::map<std::string, Stat> t_dcs;
  std::optional<Stat> c_dcs;
  std::size_t failed = 0;

  nlohmann::json to_json() const;
};
std::vector<Aggregate> aggregate(const std::vector<RunRecord>& records);

}  // namespace splitbench
