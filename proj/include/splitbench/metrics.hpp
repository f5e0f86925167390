// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitbench/tensor.hpp"

namespace splitbench {

/// Fraction of equal entries. Empty or mismatched inputs are rejected.
double mp_classification(const std::vector<std::int32_t>& preds, const std::vector<std::int32_t>& labels);

/// Next-token accuracy: argmax over the vocabulary at every row whose target
/// is not ignored. `logits` is [..., V] with one row per target.
double mp_next_token(const Tensor& logits, const std::vector<std::int32_t>& targets);

/// Row-wise argmax over the last dimension; ties go to the lowest index.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

struct RecallReport {
  double mean = 0.0;
  std::vector<double> per_sample;  // one per scored sample
  std::size_t skipped = 0;         // samples whose truth was empty
};

/// Multiset token recall per sample, averaged. Padding (id 0) is excluded
/// from both sides; samples with no real tokens are skipped. Throws
/// MetricError when nothing can be scored.
RecallReport mia_recall(const std::vector<std::vector<std::int32_t>>& recovered,
                        const std::vector<std::vector<std::int32_t>>& truth);

/// 1 / (1 + sqrt((1 - beta)(AP - AP*)^2 + beta (MP - MP*)^2)).
double dcs(double mp, double ap, double mp_ref, double ap_ref, double beta = 0.5);
/// Mean DCS within one attack type.
double t_dcs(const std::vector<double>& dcs_values);
/// Weighted sum of per-type scores; weights must sum to 1.
double c_dcs(const std::vector<double>& t_dcs_values, const std::vector<double>& weights);
/// Positive when `a` scores higher.
double delta_dcs(double dcs_a, double dcs_b);
/// As above, after checking the two configs differ only under `factor`
/// (a top-level key). Throws MetricError otherwise.
double delta_dcs(double dcs_a, const nlohmann::json& config_a, double dcs_b, const nlohmann::json& config_b,
                 const std::string& factor);

/// Named main-task metrics. Only "accuracy" and "token_accuracy" are
/// computed here; the other registered names fail loudly.
bool is_known_metric(const std::string& id);
bool is_implemented_metric(const std::string& id);
void require_metric(const std::string& id);

}  // namespace splitbench
