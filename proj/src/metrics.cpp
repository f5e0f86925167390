// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "splitbench/errors.hpp"

namespace splitbench {
namespace {

constexpr std::int32_t kPad = 0;
constexpr std::int32_t kIgnore = -100;

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw MetricError(std::string("dcs: ") + what + " must lie in [0, 1]");
}

}  // namespace

double mp_classification(const std::vector<std::int32_t>& preds, const std::vector<std::int32_t>& labels) {
  if (preds.size() != labels.size()) {
    throw MetricError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw MetricError("accuracy: empty evaluation set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  const std::size_t V = logits.shape().back();
  const std::size_t rows = V ? logits.numel() / V : 0;
  auto d = logits.data();
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = static_cast<std::int32_t>(std::max_element(d.begin() + r * V, d.begin() + (r + 1) * V) -
                                       (d.begin() + r * V));
  }
  return out;
}

double mp_next_token(const Tensor& logits, const std::vector<std::int32_t>& targets) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != targets.size()) {
    throw MetricError("token accuracy: " + std::to_string(pred.size()) + " rows for " +
                      std::to_string(targets.size()) + " targets");
  }
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (targets[i] == kIgnore) continue;
    ++n;
    hit += pred[i] == targets[i];
  }
  if (n == 0) throw MetricError("token accuracy: no scored positions");
  return static_cast<double>(hit) / static_cast<double>(n);
}

RecallReport mia_recall(const std::vector<std::vector<std::int32_t>>& recovered,
                        const std::vector<std::vector<std::int32_t>>& truth) {
  if (recovered.size() != truth.size()) {
    throw MetricError("recall: " + std::to_string(recovered.size()) + " recovered sequences for " +
                      std::to_string(truth.size()) + " samples");
  }
  RecallReport r;
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::map<std::int32_t, long> want;
    long n = 0;
    for (auto t : truth[i]) {
      if (t == kPad) continue;
      ++want[t];
      ++n;
    }
    if (n == 0) {
      ++r.skipped;
      continue;
    }
    long hit = 0;
    for (auto t : recovered[i]) {
      if (t == kPad) continue;
      auto it = want.find(t);
      if (it != want.end() && it->second > 0) {
        --it->second;
        ++hit;
      }
    }
    const double v = static_cast<double>(hit) / static_cast<double>(n);
    r.per_sample.push_back(v);
    total += v;
  }
  if (r.per_sample.empty()) throw MetricError("recall: no sample has real tokens");
  r.mean = total / static_cast<double>(r.per_sample.size());
  return r;
}

double dcs(double mp, double ap, double mp_ref, double ap_ref, double beta) {
  check_unit(mp, "MP");
  check_unit(ap, "AP");
  check_unit(mp_ref, "MP*");
  check_unit(ap_ref, "AP*");
  check_unit(beta, "beta");
  const double da = ap - ap_ref, dm = mp - mp_ref;
  return 1.0 / (1.0 + std::sqrt((1.0 - beta) * da * da + beta * dm * dm));
}

double t_dcs(const std::vector<double>& dcs_values) {
  if (dcs_values.empty()) throw MetricError("T-DCS: no scores for this attack type");
  double s = 0.0;
  for (double v : dcs_values) s += v;
  return s / static_cast<double>(dcs_values.size());
}

double c_dcs(const std::vector<double>& t_dcs_values, const std::vector<double>& weights) {
  if (t_dcs_values.size() != weights.size() || t_dcs_values.empty()) {
    throw MetricError("C-DCS: one weight per attack type required");
  }
  double wsum = 0.0, s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    wsum += weights[i];
    s += weights[i] * t_dcs_values[i];
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw MetricError("C-DCS: weights sum to " + std::to_string(wsum));
  return s;
}

double delta_dcs(double dcs_a, double dcs_b) { return dcs_a - dcs_b; }

double delta_dcs(double dcs_a, const nlohmann::json& config_a, double dcs_b, const nlohmann::json& config_b,
                 const std::string& factor) {
  nlohmann::json a = config_a, b = config_b;
  a.erase(factor);
  b.erase(factor);
  if (a != b) {
    std::string keys;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key()) || b.at(it.key()) != it.value()) keys += (keys.empty() ? "" : ", ") + it.key();
    }
    for (auto it = b.begin(); it != b.end(); ++it) {
      if (!a.contains(it.key())) keys += (keys.empty() ? "" : ", ") + it.key();
    }
    throw MetricError("delta DCS: configs also differ in " + keys);
  }
  return delta_dcs(dcs_a, dcs_b);
}

namespace {
const std::vector<std::string> kImplemented{"accuracy", "token_accuracy"};
const std::vector<std::string> kRegistered{"pearson", "exact_match", "rouge", "codebleu"};
}  // namespace

bool is_implemented_metric(const std::string& id) {
  return std::find(kImplemented.begin(), kImplemented.end(), id) != kImplemented.end();
}

bool is_known_metric(const std::string& id) {
  return is_implemented_metric(id) || std::find(kRegistered.begin(), kRegistered.end(), id) != kRegistered.end();
}

void require_metric(const std::string& id) {
  if (!is_known_metric(id)) throw MetricError("metric '" + id + "' is unknown");
  if (!is_implemented_metric(id)) throw MetricError("metric '" + id + "' is registered but not implemented");
}

}  // namespace splitbench
