// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/records.hpp"

namespace splitbench {

enum class ReportKind { MpApScatter, DcsRanking, DeltaDcsHist, EfficiencyTable };
std::string to_string(ReportKind k);
ReportKind parse_report_kind(const std::string& s);

struct RankingRow {
  std::string defense;
  std::string parameter;
  std::optional<double> t_dcs_lia;
  std::optional<double> t_dcs_mia;
  double c_dcs = 0.0;
  int rank = 0;
};

/// Sorts by C-DCS, highest first (ties keep input order), and numbers the
/// rows from 1.
std::vector<RankingRow> rank_rows(std::vector<RankingRow> rows);
/// One row per defense configuration, from seed means; baselines excluded.
std::vector<RankingRow> dcs_ranking(const std::vector<RunRecord>& records);
std::string ranking_markdown(const std::vector<RankingRow>& rows);
std::string ranking_csv(const std::vector<RankingRow>& rows);

struct Histogram {
  double width = 0.0;
  double first_edge = 0.0;  // lower edge of bin 0
  std::vector<std::size_t> counts;
  std::size_t zero_bin = 0;  // the bin whose interval holds 0
};
/// Bins of `width` centred on multiples of `width`, so 0 is a bin centre.
Histogram centered_histogram(const std::vector<double>& values, double width);

struct DeltaDcsReport {
  std::string factor;
  std::string minuend;
  std::string subtrahend;
  std::vector<double> deltas;  // per paired configuration and attack
  struct Family {
    std::string name;  // "Overall" or a defense kind
    std::optional<double> c_dcs, t_dcs_mia, t_dcs_lia;
  };
  std::vector<Family> families;
};
/// Pairs seed-mean scores of configurations that differ only in `factor`
/// (a record field such as "strategy"). `minuend` defaults to the first of
/// the two values in sorted order.
DeltaDcsReport delta_dcs_report(const std::vector<RunRecord>& records, const std::string& factor,
                                const std::string& minuend = "");

/// Vector-graphic MP-AP scatter for one attack kind; marker area grows with
/// defense strength (or n_head in an n_head sweep). Records that are not
/// comparable (task, pipeline, strategy, metric, partition) are rejected.
std::string mp_ap_scatter_svg(const std::vector<RunRecord>& records, const std::string& attack_kind);

struct EfficiencyRow {
  std::string label;
  std::string mode;
  std::optional<double> throughput;  // tokens per second, from timing sidecars
  std::optional<double> kb_per_token;
  double total_mb = 0.0;
};
std::vector<EfficiencyRow> efficiency_rows(const std::vector<RunRecord>& records,
                                           const std::map<std::string, nlohmann::json>& timings);
std::string efficiency_markdown(const std::vector<EfficiencyRow>& rows);

struct ReportOptions {
  std::string factor = "strategy";
  std::string minuend;
  std::map<std::string, nlohmann::json> timings;
};

/// Writes the report files into `out_dir` and returns their paths. Output
/// is a pure function of the records (and timing sidecars for throughput).
std::vector<std::filesystem::path> emit_report(const std::vector<RunRecord>& records, ReportKind kind,
                                               const std::filesystem::path& out_dir,
                                               const ReportOptions& options = {});

}  // namespace splitbench
