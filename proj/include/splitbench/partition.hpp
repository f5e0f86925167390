// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace splitbench {

enum class PartitionMode { HT, HBT };

std::string to_string(PartitionMode m);
PartitionMode parse_partition_mode(const std::string& s);

/// Layer-boundary split of an n-layer model. HT has no body.
struct PartitionPlan {
  PartitionMode mode = PartitionMode::HT;
  int n_head = 1;
  int n_body = 0;
  int n_tail = 1;

  static PartitionPlan ht(int n_head, int n_tail) { return {PartitionMode::HT, n_head, 0, n_tail}; }
  static PartitionPlan hbt(int n_head, int n_body, int n_tail) {
    return {PartitionMode::HBT, n_head, n_body, n_tail};
  }
  /// HT plan for an n-layer model with the given head size.
  static PartitionPlan ht_for(int n_layers, int n_head) { return ht(n_head, n_layers - n_head); }

  int total_layers() const { return n_head + n_body + n_tail; }

  /// Throws ConfigError when the plan does not cover exactly `n_layers`.
  void validate(int n_layers) const;

  /// Soft checks. HBT plans are expected to keep most layers in the body.
  std::vector<std::string> warnings() const;

  nlohmann::json to_json() const;
  static PartitionPlan from_json(const nlohmann::json& j);

  bool operator==(const PartitionPlan&) const = default;
};

}  // namespace splitbench
