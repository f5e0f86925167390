// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "splitbench/channel.hpp"
#include "splitbench/defense.hpp"
#include "splitbench/model.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/partition.hpp"
#include "splitbench/party_runner.hpp"
#include "splitbench/protocol.hpp"
#include "splitbench/session.hpp"
#include "toy.hpp"

namespace splitbench::testing {

using ParamMap = std::map<std::string, std::vector<float>>;

inline std::vector<Batch> toy_batches(const TransformerConfig& cfg, std::uint64_t seed, int n,
                                      std::size_t batch = 2, std::size_t seq = 6) {
  Rng rng = Rng(seed).split("batches");
  std::vector<Batch> out;
  for (int i = 0; i < n; ++i) {
    Batch b;
    b.x = random_tokens(rng, batch, seq, cfg.vocab_size);
    if (cfg.num_classes) {
      for (std::size_t r = 0; r < batch; ++r) {
        b.targets.push_back(static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(*cfg.num_classes))));
      }
    } else {
      b.targets = next_token_targets(b.x);
    }
    out.push_back(std::move(b));
  }
  return out;
}

inline ParamMap to_map(const NamedParams& params) {
  ParamMap m;
  for (const auto& [name, t] : params) m[name] = std::vector<float>(t.data().begin(), t.data().end());
  return m;
}

struct SplitTraining {
  ParamMap params;  // union of both parties' slices
  std::vector<double> losses;
  std::vector<ProtocolMessage> data_transcript;
  std::vector<ProtocolMessage> model_transcript;
  TrafficMeter data_meter;
  TrafficMeter model_meter;
};

struct SplitArgs {
  PartitionPlan plan;
  FinetuneStrategy strategy;
  PartyOptions options;
  LoraOptions lora;
  std::vector<DefenseSpec> defenses;
  std::uint64_t digest = 7;
};

inline SplitTraining train_split(const Transformer& base, const SplitArgs& a, const std::vector<Batch>& batches) {
  auto slices = partition(base, a.plan);
  const bool hbt = a.plan.mode == PartitionMode::HBT;
  ModelSlice head = std::move(slices[0]);
  ModelSlice remote = std::move(slices[1]);
  std::optional<ModelSlice> tail;
  if (hbt) tail = std::move(slices[2]);
  std::vector<ModelSlice*> data{&head};
  if (tail) data.push_back(&*tail);
  configure_trainability(data, {&remote}, a.strategy, a.lora, a.options.seed);

  std::unique_ptr<DefenseStack> stack;
  if (!a.defenses.empty()) {
    DefenseEnv env;
    env.model = base.config();
    env.mode = a.plan.mode;
    env.embedding_table = head.embedding_table();
    env.seed = a.options.seed;
    stack = std::make_unique<DefenseStack>(a.defenses, env);
  }

  auto [data_ch, model_ch] = make_in_process_pair();
  ModelPartyRunner runner(std::move(model_ch), a.plan.mode, std::move(remote), a.options, a.digest);
  Endpoint ep(*data_ch, "data party");
  DataParty party(a.plan.mode, std::move(head), std::move(tail), ep, a.options, stack.get());
  party.start(a.digest);
  SplitTraining out;
  for (std::size_t i = 0; i < batches.size(); ++i) out.losses.push_back(party.train_step(batches[i], i + 1).loss);
  party.finish();
  runner.join();

  out.params = to_map(party.head().named_parameters());
  if (party.tail()) out.params.merge(to_map(party.tail()->named_parameters()));
  out.params.merge(to_map(runner.slice().named_parameters()));
  out.data_transcript = ep.transcript();
  out.model_transcript = runner.transcript();
  out.data_meter = data_ch->meter();
  out.model_meter = runner.meter();
  return out;
}

/// Trains the unsplit model with the same streams and update rule.
inline ParamMap train_monolithic(const Transformer& base, const SplitArgs& a, const std::vector<Batch>& batches,
                                 std::vector<double>* losses = nullptr) {
  Transformer m = base.clone();
  if (a.strategy.method == Method::LoRA) {
    m.attach_lora(a.lora, a.options.seed);
  } else {
    m.set_trainable(true);
  }
  std::vector<Tensor> params;
  for (auto& [name, t] : m.named_parameters()) {
    if (t.requires_grad()) params.push_back(t);
  }
  auto opt = make_optimizer(a.options.optimizer, params, a.options.lr);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const ForwardContext ctx{true, step_stream(a.options.seed, i + 1)};
    Tensor loss = task_loss(m.forward(batches[i].x, ctx), batches[i].targets);
    if (losses) losses->push_back(loss.item());
    opt->zero_grad();
    loss.backward();
    opt->step();
  }
  return to_map(m.named_parameters());
}

}  // namespace splitbench::testing
