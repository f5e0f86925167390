// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "splitbench/model.hpp"

namespace splitbench {

/// Contents of a checkpoint file. Layout is described in docs/FORMATS.md.
struct Checkpoint {
  nlohmann::json manifest;  // {"config": ..., "meta": ...}
  std::map<std::string, Tensor> tensors;

  TransformerConfig config() const { return TransformerConfig::from_json(manifest.at("config")); }
};

std::string encode_checkpoint(const NamedParams& params, const nlohmann::json& manifest);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model described by the checkpoint and loads its weights.
Transformer model_from_checkpoint(const Checkpoint& ck);

}  // namespace splitbench
