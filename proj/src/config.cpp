// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"
#include "splitbench/rng.hpp"

namespace splitbench {

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::Mia: return "mia";
    case Pipeline::Lia: return "lia";
    case Pipeline::Joint: return "joint";
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& s) {
  for (Pipeline p : {Pipeline::Mia, Pipeline::Lia, Pipeline::Joint}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("pipeline: unknown value '" + s + "' (mia, lia, joint)");
}

std::string to_string(SweepAxis a) { return a == SweepAxis::Strength ? "strength" : "n_head"; }

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "strength") return SweepAxis::Strength;
  if (s == "n_head") return SweepAxis::NHead;
  throw ConfigError("sweep.axis: unknown value '" + s + "' (strength, n_head)");
}

namespace {

std::string archive_name(ArchiveMode m) {
  switch (m) {
    case ArchiveMode::None: return "none";
    case ArchiveMode::Attack: return "attack";
    case ArchiveMode::Full: return "full";
  }
  return "?";
}

ArchiveMode parse_archive(const std::string& s) {
  for (ArchiveMode m : {ArchiveMode::None, ArchiveMode::Attack, ArchiveMode::Full}) {
    if (archive_name(m) == s) return m;
  }
  throw ConfigError("archive: unknown value '" + s + "' (none, attack, full)");
}

// Rejects keys a section does not know, so typos do not pass silently.
void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

TransformerConfig ModelShape::resolve(const Corpus& corpus) const {
  TransformerConfig c;
  c.arch = arch;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_ff = d_ff;
  c.vocab_size = corpus.vocab_size;
  c.max_seq_len = static_cast<int>(corpus.seq_len);
  if (corpus.classification()) c.num_classes = corpus.num_classes;
  c.validate();
  return c;
}

nlohmann::json ModelShape::to_json() const {
  return {{"arch", to_string(arch)}, {"d_model", d_model}, {"n_layers", n_layers},
          {"n_heads", n_heads},      {"d_ff", d_ff}};
}

ModelShape ModelShape::from_json(const nlohmann::json& j) {
  check_keys(j, "model", {"arch", "d_model", "n_layers", "n_heads", "d_ff"});
  ModelShape m;
  if (j.contains("arch")) m.arch = parse_arch(j.at("arch").get<std::string>());
  m.d_model = j.value("d_model", m.d_model);
  m.n_layers = j.value("n_layers", m.n_layers);
  m.n_heads = j.value("n_heads", m.n_heads);
  m.d_ff = j.value("d_ff", m.d_ff);
  return m;
}

nlohmann::json TrainingOptions::to_json() const {
  return {{"batch_size", batch_size},
          {"eval_batch_size", eval_batch_size},
          {"lr", lr},
          {"epochs", epochs},
          {"patience", patience},
          {"optimizer", to_string(optimizer)},
          {"pretrain_epochs", pretrain_epochs},
          {"pretrain_lr", pretrain_lr},
          {"pretrain_seed", pretrain_seed},
          {"mask_rate", mask_rate},
          {"deploy_epochs", deploy_epochs},
          {"defense_epochs", defense_epochs},
          {"defense_lr", defense_lr}};
}

TrainingOptions TrainingOptions::from_json(const nlohmann::json& j) {
  check_keys(j, "training",
             {"batch_size", "eval_batch_size", "lr", "epochs", "patience", "optimizer", "pretrain_epochs",
              "pretrain_lr", "pretrain_seed", "mask_rate", "deploy_epochs", "defense_epochs", "defense_lr"});
  TrainingOptions t;
  t.batch_size = j.value("batch_size", t.batch_size);
  t.eval_batch_size = j.value("eval_batch_size", t.eval_batch_size);
  t.lr = j.value("lr", t.lr);
  t.epochs = j.value("epochs", t.epochs);
  t.patience = j.value("patience", t.patience);
  if (j.contains("optimizer")) t.optimizer = parse_optimizer_kind(j.at("optimizer").get<std::string>());
  t.pretrain_epochs = j.value("pretrain_epochs", t.pretrain_epochs);
  t.pretrain_lr = j.value("pretrain_lr", t.pretrain_lr);
  t.pretrain_seed = j.value("pretrain_seed", t.pretrain_seed);
  t.mask_rate = j.value("mask_rate", t.mask_rate);
  t.deploy_epochs = j.value("deploy_epochs", t.deploy_epochs);
  t.defense_epochs = j.value("defense_epochs", t.defense_epochs);
  t.defense_lr = j.value("defense_lr", t.defense_lr);
  if (t.batch_size == 0 || t.eval_batch_size == 0) throw ConfigError("training: batch sizes must be > 0");
  if (t.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (t.patience < 1) throw ConfigError("training.patience must be >= 1");
  if (t.pretrain_epochs < 0 || t.deploy_epochs < 0 || t.defense_epochs < 0) {
    throw ConfigError("training: epoch counts must be >= 0");
  }
  if (!(t.lr >= 0) || !(t.pretrain_lr > 0) || !(t.defense_lr > 0)) {
    throw ConfigError("training: learning rates must be positive");
  }
  if (!(t.mask_rate > 0 && t.mask_rate < 1)) throw ConfigError("training.mask_rate must be in (0, 1)");
  return t;
}

nlohmann::json MetricOptions::to_json() const { return {{"beta", beta}, {"weights", weights}}; }

MetricOptions MetricOptions::from_json(const nlohmann::json& j) {
  check_keys(j, "metrics", {"beta", "weights"});
  MetricOptions m;
  m.beta = j.value("beta", m.beta);
  m.weights = j.value("weights", m.weights);
  if (!(m.beta >= 0 && m.beta <= 1)) throw ConfigError("metrics.beta must be in [0, 1]");
  for (const auto& [k, w] : m.weights) {
    if (k != "MIA" && k != "LIA") throw ConfigError("metrics.weights: unknown attack type '" + k + "'");
    if (!(w >= 0)) throw ConfigError("metrics.weights: negative weight for " + k);
  }
  return m;
}

nlohmann::json SweepSpec::to_json() const { return {{"axis", to_string(axis)}, {"values", values}}; }

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  check_keys(j, "sweep", {"axis", "values"});
  SweepSpec s;
  s.axis = parse_sweep_axis(j.at("axis").get<std::string>());
  s.values = j.value("values", s.values);
  return s;
}

nlohmann::json TransportOptions::to_json() const {
  return {{"mode", mode}, {"listen", listen}, {"connect", connect}};
}

TransportOptions TransportOptions::from_json(const nlohmann::json& j) {
  check_keys(j, "transport", {"mode", "listen", "connect"});
  TransportOptions t;
  t.mode = j.value("mode", t.mode);
  t.listen = j.value("listen", t.listen);
  t.connect = j.value("connect", t.connect);
  if (t.mode != "standalone" && t.mode != "distributed") {
    throw ConfigError("transport.mode must be 'standalone' or 'distributed'");
  }
  return t;
}

std::string ExperimentConfig::mp_metric() const { return task.is_classification() ? "accuracy" : "token_accuracy"; }

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  partition.validate(model.n_layers);
  if (model.d_model % model.n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  require_metric(mp_metric());
  if (model.arch == Arch::DecoderOnly && task.is_classification()) {
    throw ConfigError("model.arch decoder-only needs a language-modelling task");
  }
  if (model.arch == Arch::EncoderOnly && !task.is_classification()) {
    throw ConfigError("model.arch encoder-only needs a classification task");
  }

  // Allowed pairings of pipeline, deployment position and phase.
  const std::string where = "pipeline " + to_string(pipeline) + ": ";
  for (const DefenseSpec& d : defenses) {
    d.validate();
    const std::string who = where + "defense " + to_string(d.kind) + " ";
    switch (pipeline) {
      case Pipeline::Mia:
        if (d.position != DefensePosition::Head) throw ConfigError(who + "must be mounted at the Head");
        if (d.phase != Phase::Inference) throw ConfigError(who + "must use the inference phase");
        break;
      case Pipeline::Lia:
        if (d.position != DefensePosition::Tail) throw ConfigError(who + "must be mounted at the Tail");
        if (d.phase != Phase::Training) throw ConfigError(who + "must use the training phase");
        break;
      case Pipeline::Joint:
        if (d.position != DefensePosition::Both) throw ConfigError(who + "must be mounted at Both ends");
        if (d.phase != Phase::Training) throw ConfigError(who + "must use the training phase");
        break;
    }
    if (d.kind == DefenseKind::MID && d.position != DefensePosition::Head && partition.mode != PartitionMode::HBT) {
      throw ConfigError(who + "at the tail needs an HBT partition");
    }
  }
  if (attacks.empty()) throw ConfigError("attacks must not be empty");
  for (const AttackSpec& a : attacks) {
    a.validate();
    const std::string who = where + "attack " + to_string(a.kind) + " ";
    if (pipeline == Pipeline::Mia && !is_mia(a.kind)) throw ConfigError(who + "is not a model inversion attack");
    if (pipeline == Pipeline::Mia && a.phase != Phase::Inference) throw ConfigError(who + "must use the inference phase");
    if (pipeline == Pipeline::Lia && is_mia(a.kind)) throw ConfigError(who + "is not a label inference attack");
    if (!is_mia(a.kind) && !task.is_classification()) throw ConfigError(who + "needs a classification task");
    if (a.kind == AttackKind::NS && task.kind == CorpusKind::SyntheticClassification && task.classes != 2) {
      throw ConfigError(who + "needs a binary task");
    }
  }
  if (sweep) {
    if (sweep->axis == SweepAxis::Strength) {
      std::set<DefenseKind> kinds;
      for (const auto& d : defenses) kinds.insert(d.kind);
      if (kinds.size() != 1) throw ConfigError("sweep over strength needs exactly one defense kind");
      for (double v : sweep->values) {
        DefenseSpec probe = defenses.front();
        probe.strength = v;
        probe.validate();
      }
    } else {
      if (sweep->values.empty()) throw ConfigError("sweep over n_head needs values");
      for (double v : sweep->values) {
        if (v != std::floor(v) || v < 1) throw ConfigError("sweep.values: n_head must be a positive integer");
      }
    }
  }
}

nlohmann::json ExperimentConfig::to_json(bool with_transport) const {
  nlohmann::json j;
  j["name"] = name;
  j["task"] = task.to_json();
  j["model"] = model.to_json();
  j["partition"] = partition.to_json();
  j["strategy"] = strategy.name();
  j["lora"] = lora.to_json();
  j["pipeline"] = to_string(pipeline);
  j["defenses"] = nlohmann::json::array();
  for (const auto& d : defenses) j["defenses"].push_back(d.to_json());
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : attacks) j["attacks"].push_back(a.to_json());
  j["seeds"] = seeds;
  if (sweep) j["sweep"] = sweep->to_json();
  j["training"] = training.to_json();
  j["metrics"] = metrics.to_json();
  j["archive"] = archive_name(archive);
  if (with_transport) j["transport"] = transport.to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  check_keys(j, "config",
             {"name", "task", "model", "partition", "strategy", "lora", "pipeline", "defenses", "attacks", "seeds",
              "n_seeds", "sweep", "training", "metrics", "archive", "transport"});
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.task = TaskSpec::from_json(j.at("task"));
    if (j.contains("model")) c.model = ModelShape::from_json(j.at("model"));
    if (j.contains("partition")) c.partition = PartitionPlan::from_json(j.at("partition"));
    if (j.contains("strategy")) c.strategy = FinetuneStrategy::parse(j.at("strategy").get<std::string>());
    if (j.contains("lora")) c.lora = LoraOptions::from_json(j.at("lora"));
    c.pipeline = parse_pipeline(j.at("pipeline").get<std::string>());
    for (const auto& d : j.value("defenses", nlohmann::json::array())) c.defenses.push_back(DefenseSpec::from_json(d));
    for (const auto& a : j.value("attacks", nlohmann::json::array())) {
      nlohmann::json aj = a;
      // Fine-tuning pipelines attack the training transcript unless told otherwise.
      if (!aj.contains("phase") && c.pipeline != Pipeline::Mia) aj["phase"] = "training";
      c.attacks.push_back(AttackSpec::from_json(aj));
    }
    if (j.contains("seeds") && j.contains("n_seeds")) throw ConfigError("give either seeds or n_seeds");
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("n_seeds")) {
      const int n = j.at("n_seeds").get<int>();
      if (n < 1) throw ConfigError("n_seeds must be >= 1");
      c.seeds.clear();
      for (int i = 0; i < n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(i));
    }
    if (j.contains("sweep") && !j.at("sweep").is_null()) c.sweep = SweepSpec::from_json(j.at("sweep"));
    if (j.contains("training")) c.training = TrainingOptions::from_json(j.at("training"));
    if (j.contains("metrics")) c.metrics = MetricOptions::from_json(j.at("metrics"));
    if (j.contains("archive")) c.archive = parse_archive(j.at("archive").get<std::string>());
    if (j.contains("transport")) c.transport = TransportOptions::from_json(j.at("transport"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::uint64_t ExperimentConfig::digest() const { return fnv1a64(to_json(false).dump()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t Cell::session_digest(std::uint64_t config_digest) const {
  return mix64(config_digest ^ fnv1a64(id));
}

std::string defense_label(const std::vector<DefenseSpec>& specs) {
  if (specs.empty()) return "none";
  std::string out;
  for (const auto& d : specs) {
    if (!out.empty()) out += "+";
    out += to_string(d.kind) + "(" + strength_name(d.kind) + "=" + fmt_g(d.strength) + ")";
  }
  return out;
}

namespace {

std::string cell_id(const Cell& c) {
  std::string s = c.baseline ? "none" : "";
  for (const auto& d : c.defenses) {
    if (!s.empty()) s += "+";
    s += to_string(d.kind) + "-" + fmt_g(d.strength);
  }
  s += "_" + to_string(c.plan.mode) + std::to_string(c.plan.n_head) + "-" + std::to_string(c.plan.n_body) + "-" +
       std::to_string(c.plan.n_tail);
  s += "_seed" + std::to_string(c.seed);
  return s;
}

}  // namespace

std::vector<Cell> enumerate_cells(const ExperimentConfig& config) {
  struct Point {
    PartitionPlan plan;
    std::vector<DefenseSpec> defenses;
    std::optional<double> value;
  };
  std::vector<Point> points;
  if (!config.sweep) {
    points.push_back({config.partition, config.defenses, std::nullopt});
  } else if (config.sweep->axis == SweepAxis::Strength) {
    std::vector<double> values = config.sweep->values;
    if (values.empty()) values = strength_grid(config.defenses.front().kind);
    for (double v : values) {
      Point p{config.partition, config.defenses, v};
      for (auto& d : p.defenses) d.strength = v;
      points.push_back(std::move(p));
    }
  } else {
    for (double v : config.sweep->values) {
      PartitionPlan plan = config.partition;
      const int n_head = static_cast<int>(v);
      if (plan.mode == PartitionMode::HT) {
        plan = PartitionPlan::ht(n_head, config.model.n_layers - n_head);
      } else {
        plan.n_head = n_head;
        plan.n_body = config.model.n_layers - n_head - plan.n_tail;
      }
      plan.validate(config.model.n_layers);
      points.push_back({plan, config.defenses, v});
    }
  }

  std::vector<Cell> cells;
  std::set<std::string> baselines;
  for (const Point& p : points) {
    for (std::uint64_t seed : config.seeds) {
      Cell base;
      base.seed = seed;
      base.baseline = true;
      base.plan = p.plan;
      if (config.sweep && config.sweep->axis == SweepAxis::NHead) base.sweep_value = p.value;
      base.id = cell_id(base);
      if (baselines.insert(base.id).second) cells.push_back(base);
      if (p.defenses.empty()) continue;
      Cell c;
      c.seed = seed;
      c.plan = p.plan;
      c.defenses = p.defenses;
      c.sweep_value = p.value;
      c.id = cell_id(c);
      cells.push_back(std::move(c));
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].index = i;
  return cells;
}

}  // namespace splitbench
