// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/partition.hpp"

#include "splitbench/errors.hpp"

namespace splitbench {

std::string to_string(PartitionMode m) { return m == PartitionMode::HT ? "HT" : "HBT"; }

PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "HT" || s == "ht") return PartitionMode::HT;
  if (s == "HBT" || s == "hbt") return PartitionMode::HBT;
  throw ConfigError("partition.mode: unknown value '" + s + "'");
}

void PartitionPlan::validate(int n_layers) const {
  if (n_head < 1) throw ConfigError("partition.n_head must be >= 1");
  if (n_tail < 1) throw ConfigError("partition.n_tail must be >= 1");
  if (mode == PartitionMode::HT && n_body != 0) {
    throw ConfigError("partition.n_body must be 0 for HT");
  }
  if (mode == PartitionMode::HBT && n_body < 1) {
    throw ConfigError("partition.n_body must be >= 1 for HBT");
  }
  if (total_layers() != n_layers) {
    throw ConfigError("partition: layer counts sum to " + std::to_string(total_layers()) +
                      " but the model has " + std::to_string(n_layers) + " layers");
  }
}

std::vector<std::string> PartitionPlan::warnings() const {
  std::vector<std::string> out;
  if (mode == PartitionMode::HBT && (n_body <= n_head || n_body <= n_tail)) {
    out.push_back("HBT body (" + std::to_string(n_body) +
                  " layers) is not larger than both head and tail");
  }
  return out;
}

nlohmann::json PartitionPlan::to_json() const {
  return {{"mode", to_string(mode)}, {"n_head", n_head}, {"n_body", n_body}, {"n_tail", n_tail}};
}

PartitionPlan PartitionPlan::from_json(const nlohmann::json& j) {
  PartitionPlan p;
  p.mode = parse_partition_mode(j.at("mode").get<std::string>());
  p.n_head = j.at("n_head").get<int>();
  p.n_body = j.value("n_body", 0);
  p.n_tail = j.at("n_tail").get<int>();
  return p;
}

}  // namespace splitbench
