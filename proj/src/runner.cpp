// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include <unistd.h>

#include "splitbench/attacks.hpp"
#include "splitbench/channel.hpp"
#include "splitbench/checkpoint.hpp"
#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"
#include "splitbench/ops.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/party_runner.hpp"
#include "splitbench/session.hpp"

namespace splitbench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr auto kSessionTimeout = std::chrono::minutes(30);

// Replaces a share of real tokens with the mask id; targets hold the
// originals at masked positions and are ignored elsewhere.
Batch mask_batch(const Batch& b, double rate, Rng rng) {
  Batch out;
  out.x = b.x;
  out.targets.assign(b.x.ids.size(), kIgnoreTarget);
  std::size_t first_real = b.x.ids.size();
  bool any = false;
  for (std::size_t i = 0; i < b.x.ids.size(); ++i) {
    const std::int32_t id = b.x.ids[i];
    if (id == kPadToken || id == kClsToken) continue;
    first_real = std::min(first_real, i);
    if (rng.uniform() < rate) {
      out.targets[i] = id;
      out.x.ids[i] = kUnkToken;
      any = true;
    }
  }
  if (!any && first_real < b.x.ids.size()) {
    out.targets[first_real] = b.x.ids[first_real];
    out.x.ids[first_real] = kUnkToken;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng r = Rng(seed).split("order").split(static_cast<std::uint64_t>(epoch));
  r.shuffle(order);
  return order;
}

void fit(Transformer& m, const Corpus& corpus, std::size_t batch_size, double lr, int epochs, std::uint64_t seed,
         bool masked, double mask_rate) {
  m.set_trainable(true);
  std::vector<Tensor> params;
  for (auto& [name, t] : m.named_parameters()) params.push_back(t);
  auto opt = make_optimizer(OptimizerKind::Adam, params, lr);
  std::uint64_t step = 0;
  for (int e = 1; e <= epochs; ++e) {
    const auto order = epoch_order(corpus.train.size(), seed, e);
    for (const Batch& b : corpus.batches(corpus.train, batch_size, &order)) {
      ++step;
      const Batch use = masked ? mask_batch(b, mask_rate, Rng(seed).split("mask").split(step)) : b;
      Tensor loss = task_loss(m.forward(use.x, ForwardContext{true, step_stream(seed, step)}), use.targets);
      opt->zero_grad();
      loss.backward();
      opt->step();
    }
  }
}

// Main-task score accumulated over batches with exact counts.
class MpAccumulator {
 public:
  explicit MpAccumulator(bool classification) : classification_(classification) {}
  void add(const Tensor& logits, const Batch& b) {
    const auto pred = argmax_rows(logits);
    if (classification_) {
      preds_.insert(preds_.end(), pred.begin(), pred.end());
      labels_.insert(labels_.end(), b.targets.begin(), b.targets.end());
      return;
    }
    if (pred.size() != b.targets.size()) throw ShapeError("token accuracy: logits rows differ from targets");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (b.targets[i] == kIgnoreTarget) continue;
      ++count_;
      if (pred[i] == b.targets[i]) ++correct_;
    }
  }
  double value() const {
    if (classification_) return mp_classification(preds_, labels_);
    if (count_ == 0) throw MetricError("token accuracy: no scored positions");
    return static_cast<double>(correct_) / static_cast<double>(count_);
  }

 private:
  bool classification_;
  std::vector<std::int32_t> preds_, labels_;
  std::size_t correct_ = 0, count_ = 0;
};

// Copies every backbone tensor into a freshly built model whose task head
// stays at its own initialisation.
Transformer with_backbone(const Transformer& backbone, const TransformerConfig& cfg, std::uint64_t head_seed) {
  Transformer fresh = Transformer::build(cfg, head_seed);
  std::map<std::string, Tensor> state;
  for (auto& [name, t] : fresh.named_parameters()) state[name] = t;
  for (auto& [name, t] : backbone.named_parameters()) {
    if (name.rfind("head.", 0) == 0) continue;
    auto it = state.find(name);
    if (it != state.end() && it->second.shape() == t.shape()) it->second = t;
  }
  fresh.load_state(state);
  return fresh;
}

struct Segment {
  std::vector<ProtocolMessage> messages;
  std::vector<Batch> batches;
};

// Messages of the given types, paired with the batch of their step.
struct Observed {
  std::vector<const ProtocolMessage*> messages;
  std::vector<const Batch*> batches;
};

Observed select(const Segment& seg, MsgType type) {
  Observed o;
  for (const auto& m : seg.messages) {
    if (m.type != type) continue;
    if (o.messages.size() >= seg.batches.size()) throw AttackError("transcript has more messages than batches");
    o.batches.push_back(&seg.batches[o.messages.size()]);
    o.messages.push_back(&m);
  }
  if (o.messages.size() != seg.batches.size()) {
    throw AttackError("transcript holds " + std::to_string(o.messages.size()) + " " + to_string(type) +
                      " messages for " + std::to_string(seg.batches.size()) + " batches");
  }
  return o;
}

// First `limit` per-sample rows across messages, as a [n, rest...] tensor.
Tensor leading_rows(const Observed& o, std::size_t limit, std::size_t* rows_out) {
  std::vector<float> data;
  Shape shape;
  std::size_t rows = 0;
  for (const ProtocolMessage* m : o.messages) {
    const std::size_t b = m->shape.at(0);
    const std::size_t width = m->payload.size() / b;
    if (shape.empty()) shape = m->shape;
    for (std::size_t r = 0; r < b && rows < limit; ++r, ++rows) {
      data.insert(data.end(), m->payload.begin() + static_cast<std::ptrdiff_t>(r * width),
                  m->payload.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    }
    if (rows >= limit) break;
  }
  if (rows == 0) throw AttackError("no observed samples");
  shape[0] = rows;
  if (rows_out) *rows_out = rows;
  return Tensor(shape, std::move(data));
}

std::vector<std::vector<std::int32_t>> leading_tokens(const Observed& o, std::size_t n) {
  std::vector<std::vector<std::int32_t>> out;
  for (const Batch* b : o.batches) {
    for (std::size_t r = 0; r < b->x.batch && out.size() < n; ++r) {
      out.emplace_back(b->x.ids.begin() + static_cast<std::ptrdiff_t>(r * b->x.seq),
                       b->x.ids.begin() + static_cast<std::ptrdiff_t>((r + 1) * b->x.seq));
    }
  }
  return out;
}

// The perturbation the inversion network is pretrained against: the mounted
// head-side defense at matched strength, when it is a fixed noise process.
NoiseModel noise_model_for(const std::vector<DefenseSpec>& defenses) {
  for (const DefenseSpec& d : defenses) {
    if (d.position == DefensePosition::Tail) continue;
    switch (d.kind) {
      case DefenseKind::DP: {
        const double eps = d.strength, clip = d.extra("clip", 1.0);
        return [eps, clip](const Tensor& h, Rng& r) { return dp_perturb(h, eps, clip, r); };
      }
      case DefenseKind::SP: {
        const double rate = d.strength;
        return [rate](const Tensor& h, Rng&) { return sp_sparsify(h, rate); };
      }
      case DefenseKind::SnD: {
        const double b = d.extra("sensitivity", 10.0) / d.strength;
        return [b](const Tensor& h, Rng& r) {
          std::vector<float> v(h.data().begin(), h.data().end());
          for (float& x : v) x += static_cast<float>(r.laplace(b));
          return Tensor(h.shape(), std::move(v));
        };
      }
      default: break;
    }
  }
  return [](const Tensor& h, Rng&) { return h; };
}

std::string partition_key(const PartitionPlan& p, std::uint64_t seed) {
  return p.to_json().dump() + "#" + std::to_string(seed);
}

}  // namespace

Transformer pretrain_language_model(const TransformerConfig& lm_config, const Corpus& corpus,
                                    const TrainingOptions& opts) {
  if (lm_config.num_classes) throw ConfigError("pretraining needs a language-modelling head");
  Transformer m = Transformer::build(lm_config, opts.pretrain_seed);
  // Pretraining batches ignore the task's labels: encoders predict masked
  // tokens, decoders the next token.
  Corpus text = corpus;
  text.num_classes = 0;
  fit(m, text, opts.batch_size, opts.pretrain_lr, opts.pretrain_epochs, opts.pretrain_seed,
      lm_config.arch == Arch::EncoderOnly, opts.mask_rate);
  return m;
}

void train_monolithic(Transformer& model, const Corpus& corpus, std::size_t batch_size, double lr, int epochs,
                      std::uint64_t seed) {
  fit(model, corpus, batch_size, lr, epochs, seed, false, 0.0);
}

double evaluate_monolithic(const Transformer& model, const Corpus& corpus, const std::vector<Sample>& samples,
                           std::size_t batch_size) {
  MpAccumulator acc(corpus.classification());
  for (const Batch& b : corpus.batches(samples, batch_size)) {
    acc.add(model.forward(b.x, ForwardContext{false, Rng(0)}), b);
  }
  return acc.value();
}

struct ExperimentRunner::Impl {
  std::optional<Corpus> corpus;
  std::optional<TransformerConfig> model_cfg;
  std::optional<Transformer> backbone;
  std::optional<Transformer> deployed;
  std::string backbone_file;
  std::string deployed_file;
  std::uint64_t digest = 0;
  std::map<std::string, double> baseline_mp;

  // Everything a cell needs on both sides before the session starts.
  struct Parts {
    std::vector<ModelSlice> slices;    // configured for the session
    std::vector<ModelSlice> pristine;  // the starting weights, untouched
  };
};

ExperimentRunner::ExperimentRunner(ExperimentConfig config, RunnerOptions options)
    : impl_(std::make_unique<Impl>()), config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  if (options_.cache_dir.empty()) options_.cache_dir = options_.out_dir / "cache";
  if (options_.mode != "standalone" && options_.mode != "distributed") {
    throw ConfigError("mode must be 'standalone' or 'distributed'");
  }
  if ((!options_.listen.empty() || !options_.connect.empty()) && options_.mode != "distributed") {
    throw ConfigError("--listen and --connect need distributed mode");
  }
  if (!options_.listen.empty() && !options_.connect.empty()) {
    throw ConfigError("a process either listens (Model Party) or connects (Data Party)");
  }
  impl_->digest = config_.digest();
}

ExperimentRunner::~ExperimentRunner() = default;

const Corpus& ExperimentRunner::corpus() {
  if (!impl_->corpus) impl_->corpus = make_corpus(config_.task);
  return *impl_->corpus;
}

const TransformerConfig& ExperimentRunner::model_config() {
  if (!impl_->model_cfg) impl_->model_cfg = config_.model.resolve(corpus());
  return *impl_->model_cfg;
}

namespace {

std::optional<Transformer> load_cached(const std::filesystem::path& path, const TransformerConfig& want) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config() == want)) return std::nullopt;
  return model_from_checkpoint(ck);
}

void store_cached(const std::filesystem::path& path, const Transformer& m, const nlohmann::json& meta) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
  save_checkpoint(tmp, m, meta);
  std::filesystem::rename(tmp, path);
}

}  // namespace

Transformer ExperimentRunner::start_model(std::uint64_t seed) {
  const TransformerConfig& cfg = model_config();
  const TrainingOptions& t = config_.training;
  if (!impl_->backbone) {
    TransformerConfig lm = cfg;
    lm.num_classes.reset();
    nlohmann::json key = {{"task", config_.task.to_json()},
                          {"model", lm.to_json()},
                          {"epochs", t.pretrain_epochs},
                          {"lr", t.pretrain_lr},
                          {"seed", t.pretrain_seed},
                          {"mask_rate", t.mask_rate},
                          {"batch_size", t.batch_size}};
    impl_->backbone_file = "pretrained-" + hex64(fnv1a64(key.dump())) + ".ckpt";
    const auto path = options_.cache_dir / impl_->backbone_file;
    impl_->backbone = load_cached(path, lm);
    if (!impl_->backbone) {
      if (options_.log) *options_.log << "pretraining " << impl_->backbone_file << std::endl;
      impl_->backbone = pretrain_language_model(lm, corpus(), t);
      store_cached(path, *impl_->backbone, {{"pretraining", key}});
    }
  }
  if (config_.pipeline == Pipeline::Mia) {
    if (!cfg.num_classes) return impl_->backbone->clone();
    if (!impl_->deployed) {
      nlohmann::json key = {{"backbone", impl_->backbone_file},
                            {"epochs", t.deploy_epochs},
                            {"lr", t.lr},
                            {"seed", t.pretrain_seed},
                            {"batch_size", t.batch_size}};
      impl_->deployed_file = "deployed-" + hex64(fnv1a64(key.dump())) + ".ckpt";
      const auto path = options_.cache_dir / impl_->deployed_file;
      impl_->deployed = load_cached(path, cfg);
      if (!impl_->deployed) {
        if (options_.log) *options_.log << "training deployed model " << impl_->deployed_file << std::endl;
        Transformer m = with_backbone(*impl_->backbone, cfg, mix64(t.pretrain_seed ^ fnv1a64("task-head")));
        train_monolithic(m, corpus(), t.batch_size, t.lr, t.deploy_epochs, t.pretrain_seed);
        m.set_trainable(false);
        store_cached(path, m, {{"deployment", key}});
        impl_->deployed = std::move(m);
      }
    }
    return impl_->deployed->clone();
  }
  if (!cfg.num_classes) return impl_->backbone->clone();
  return with_backbone(*impl_->backbone, cfg, mix64(seed ^ fnv1a64("task-head")));
}

namespace {

struct CellContext {
  const ExperimentConfig& config;
  const Corpus& corpus;
  const TransformerConfig& model_cfg;
  std::uint64_t digest;
};

bool fine_tunes(const ExperimentConfig& c) { return c.pipeline != Pipeline::Mia; }

std::vector<ModelSlice> clone_all(const std::vector<ModelSlice>& v) {
  std::vector<ModelSlice> out;
  for (const auto& s : v) out.push_back(s.clone());
  return out;
}

PartyOptions party_options(const ExperimentConfig& c, std::uint64_t seed) {
  return PartyOptions{c.training.optimizer, static_cast<float>(c.training.lr), seed};
}

}  // namespace

CellOutcome ExperimentRunner::run_cell(const Cell& cell) {
  const auto t0 = Clock::now();
  const ExperimentConfig& cfg = config_;
  const Corpus& data = corpus();
  const TransformerConfig& mcfg = model_config();
  const bool hbt = cell.plan.mode == PartitionMode::HBT;
  const bool split_process = !options_.connect.empty();
  const std::uint64_t session_digest = cell.session_digest(impl_->digest);

  CellOutcome out;
  out.timing.mode = options_.mode;
  RunRecord& rec = out.record;
  rec.experiment = cfg.name;
  rec.cell = cell.id;
  rec.index = cell.index;
  rec.config_digest = hex64(impl_->digest);
  rec.seed = cell.seed;
  rec.baseline = cell.baseline;
  rec.pipeline = to_string(cfg.pipeline);
  rec.task = to_string(cfg.task.kind);
  rec.partition = cell.plan.to_json();
  rec.strategy = cfg.strategy.name();
  for (const auto& d : cell.defenses) rec.defenses.push_back(d.to_json());
  rec.defense_label = defense_label(cell.defenses);
  if (cfg.sweep) rec.sweep_axis = to_string(cfg.sweep->axis);
  rec.sweep_value = cell.sweep_value;
  rec.mp_metric = cfg.mp_metric();
  rec.beta = cfg.metrics.beta;
  char stem_buf[16];
  std::snprintf(stem_buf, sizeof stem_buf, "%04zu_", cell.index);
  const std::string stem = stem_buf + cell.id;

  // The Data Party connects before anything else can fail so that a
  // separate Model Party process stays in step with the cell order.
  std::unique_ptr<Channel> data_ch;
  std::unique_ptr<Channel> model_ch;
  std::unique_ptr<TcpListener> listener;
  std::unique_ptr<ModelPartyRunner> model_runner;
  if (split_process) data_ch = tcp_connect(options_.connect, options_.connect_timeout);

  Segment first, last, test;
  int epochs_run = 0;
  std::optional<ModelSlice> final_head, final_tail, pre_head, pre_tail;
  double session_s = 0.0;
  try {
    Transformer start = start_model(cell.seed);
    std::vector<ModelSlice> slices = partition(start, cell.plan);
    std::vector<ModelSlice> pristine = clone_all(slices);
    std::vector<ModelSlice*> data_slices{&slices[0]};
    if (hbt) data_slices.push_back(&slices[2]);
    if (fine_tunes(cfg)) {
      configure_trainability(data_slices, {&slices[1]}, cfg.strategy, cfg.lora, cell.seed);
    } else {
      for (auto& s : slices) s.set_trainable(false);
    }
    pre_head = pristine[0].clone();
    if (hbt) pre_tail = pristine[2].clone();

    std::unique_ptr<DefenseStack> stack;
    if (!cell.defenses.empty()) {
      DefenseEnv env;
      env.model = mcfg;
      env.mode = cell.plan.mode;
      env.embedding_table = pristine[0].embedding_table();
      env.token_counts = data.token_counts;
      env.special_tokens = {kPadToken, kClsToken, kUnkToken};
      env.seed = cell.seed;
      stack = std::make_unique<DefenseStack>(cell.defenses, env);
      // Learning-based defenses fit against a frozen local copy of the
      // pretrained pipeline before deployment.
      ModelSlice remote = pristine[1].clone();
      remote.set_trainable(false);
      std::optional<ModelSlice> tail;
      if (hbt) {
        tail = pristine[2].clone();
        tail->set_trainable(false);
      }
      const std::vector<Batch> local = data.batches(data.train, cfg.training.batch_size);
      PrepareContext pctx;
      pctx.head = &pristine[0];
      pctx.returned_from_head = [&remote](const Tensor& h) {
        return remote.forward(h, ForwardContext{false, Rng(0)});
      };
      pctx.downstream_from_head = [&remote, &tail](const Tensor& h) {
        Tensor r = remote.forward(h, ForwardContext{false, Rng(0)});
        return tail ? tail->forward(r, ForwardContext{false, Rng(0)}) : r;
      };
      pctx.batches = &local;
      pctx.epochs = cfg.training.defense_epochs;
      pctx.lr = static_cast<float>(cfg.training.defense_lr);
      stack->prepare(pctx);
    }

    if (!split_process) {
      if (options_.mode == "standalone") {
        auto pair = make_in_process_pair();
        data_ch = std::move(pair.first);
        model_ch = std::move(pair.second);
      } else {
        listener = std::make_unique<TcpListener>("127.0.0.1:0");
        data_ch = tcp_connect("127.0.0.1:" + std::to_string(listener->port()));
        model_ch = listener->accept();
      }
      model_runner = std::make_unique<ModelPartyRunner>(std::move(model_ch), cell.plan.mode, std::move(slices[1]),
                                                        party_options(cfg, cell.seed), session_digest);
    }

    const auto ts = Clock::now();
    Endpoint ep(*data_ch, "data party");
    if (cfg.archive == ArchiveMode::Full) ep.log_frames(&out.archived);
    std::optional<ModelSlice> tail;
    if (hbt) tail = std::move(slices[2]);
    DataParty dp(cell.plan.mode, std::move(slices[0]), std::move(tail), ep, party_options(cfg, cell.seed),
                 stack.get());
    dp.start(session_digest);
    std::uint64_t step = 0;
    const std::size_t eval_bs = cfg.training.eval_batch_size;
    if (fine_tunes(cfg)) {
      double best = -std::numeric_limits<double>::infinity();
      int stale = 0;
      const std::vector<Batch> val = data.batches(data.val, eval_bs);
      for (int e = 1; e <= cfg.training.epochs; ++e) {
        const auto order = epoch_order(data.train.size(), cell.seed, e);
        Segment seg;
        seg.batches = data.batches(data.train, cfg.training.batch_size, &order);
        ep.set_recording(true);
        for (const Batch& b : seg.batches) dp.train_step(b, ++step);
        if (stack) stack->on_epoch(dp.head());
        seg.messages = ep.take_transcript();
        if (e == 1) {
          first = std::move(seg);
        } else {
          last = std::move(seg);
        }
        epochs_run = e;
        ep.set_recording(false);
        MpAccumulator acc(data.classification());
        for (const Batch& b : val) acc.add(dp.infer(b.x, ++step), b);
        const double v = acc.value();
        if (v > best) {
          best = v;
          stale = 0;
        } else if (++stale >= cfg.training.patience) {
          break;
        }
      }
    }
    ep.set_recording(true);
    test.batches = data.batches(data.test, eval_bs);
    MpAccumulator acc(data.classification());
    for (const Batch& b : test.batches) acc.add(dp.infer(b.x, ++step), b);
    test.messages = ep.take_transcript();
    rec.mp = acc.value();
    dp.finish();
    if (model_runner) model_runner->join();
    session_s = seconds_since(ts);
    final_head = dp.head().clone();
    if (dp.tail()) final_tail = dp.tail()->clone();
    rec.traffic = meter_report(data_ch->meter()).to_json(false);
    out.timing.traffic = meter_report(data_ch->meter()).to_json(true);
    rec.transcript_digest = hex64(ep.stream_digest());
    rec.tensor_messages = ep.tensor_messages();
    rec.epochs_run = epochs_run;
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
    if (data_ch) data_ch->close();
    if (model_runner) model_runner->abort();
  }
  if (data_ch) data_ch->close();
  out.timing.session_s = session_s;

  // Attacks, on what the Model Party legitimately holds.
  const auto ta = Clock::now();
  std::vector<ProtocolMessage> used;
  if (rec.status == "ok") {
    const Segment& final_epoch = epochs_run > 1 ? last : first;
    for (const AttackSpec& spec : cfg.attacks) {
      AttackOutcome a;
      a.kind = to_string(spec.kind);
      a.type = is_mia(spec.kind) ? "MIA" : "LIA";
      a.phase = to_string(spec.phase);
      a.ap_ref = is_mia(spec.kind) ? 0.0 : 1.0 / static_cast<double>(data.num_classes);
      Rng rng = Rng(cell.seed).split("attack").split(a.kind);
      try {
        if (is_mia(spec.kind)) {
          const bool training = spec.phase == Phase::Training;
          const Segment& seg = training ? final_epoch : test;
          a.target = training ? "final-epoch H1, final head" : "test-set H1, pre-finetune head";
          const Observed obs = select(seg, MsgType::ForwardH1);
          std::size_t n = 0;
          const Tensor h = leading_rows(obs, static_cast<std::size_t>(spec.max_samples), &n);
          const auto truth = leading_tokens(obs, n);
          ModelSlice head = (training ? *final_head : *pre_head).clone();
          head.set_trainable(false);
          InversionResult r;
          switch (spec.kind) {
            case AttackKind::VMI: r = vmi(h, head, spec.epochs, spec.lr, rng); break;
            case AttackKind::RMI: r = rmi(h, head, spec.epochs, spec.lr, spec.temperature, rng); break;
            case AttackKind::BiSR: {
              const std::size_t n_aux = std::min<std::size_t>(data.aux.size(), static_cast<std::size_t>(spec.aux_samples));
              const std::vector<Sample> aux(data.aux.begin(), data.aux.begin() + static_cast<std::ptrdiff_t>(n_aux));
              r = bisr(h, head, data.token_batches(aux, cfg.training.batch_size), noise_model_for(cell.defenses),
                       spec.pretrain_epochs, spec.epochs, spec.lr, rng);
              break;
            }
            default: break;
          }
          for (std::size_t i = 0; i < obs.messages.size() && i * obs.messages[0]->shape[0] < n; ++i) {
            used.push_back(*obs.messages[i]);
          }
          a.samples = n;
          if (r.failed) {
            a.failed = true;
            a.failure = r.failure;
          } else {
            a.ap = mia_recall(r.recovered, truth).mean;
          }
        } else {
          a.target = "first-epoch G1";
          const Observed g1 = select(first, MsgType::GradG1);
          std::vector<std::int32_t> labels;
          for (const Batch* b : g1.batches) labels.insert(labels.end(), b->targets.begin(), b->targets.end());
          if (spec.kind == AttackKind::NS) {
            std::vector<double> norms;
            for (const ProtocolMessage* m : g1.messages) {
              for (const auto& row : per_sample_rows(m->to_tensor())) {
                double s = 0.0;
                for (float v : row) s += static_cast<double>(v) * v;
                norms.push_back(std::sqrt(s));
              }
            }
            const LabelResult r = ns(norms);
            a.samples = norms.size();
            a.ap = mp_classification(r.predicted, labels);
            if (r.degenerate) a.failure = "degenerate: all gradient norms equal";
            for (const ProtocolMessage* m : g1.messages) used.push_back(*m);
          } else {
            const Observed ret = select(first, hbt ? MsgType::ForwardH2 : MsgType::ForwardPred);
            const std::size_t limit = static_cast<std::size_t>(spec.max_samples);
            std::size_t n = 0;
            const Tensor g = leading_rows(g1, limit, &n);
            const Tensor returned = leading_rows(ret, limit, nullptr);
            std::optional<ModelSlice> shadow_tail;
            if (hbt) {
              shadow_tail = pre_tail->clone();
              shadow_tail->set_trainable(false);
            }
            const auto shadow = bli_shadow_pairs(returned, shadow_tail ? &*shadow_tail : nullptr, data.num_classes);
            const LabelResult r = bli(per_sample_rows(g), shadow, data.num_classes, spec.epochs, spec.lr, rng);
            a.samples = n;
            a.ap = mp_classification(r.predicted, std::vector<std::int32_t>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)));
            for (std::size_t i = 0; i < g1.messages.size() && i * g1.messages[0]->shape[0] < n; ++i) {
              used.push_back(*g1.messages[i]);
              used.push_back(*ret.messages[i]);
            }
          }
        }
      } catch (const std::exception& e) {
        a.failed = true;
        a.failure = e.what();
      }
      rec.attacks.push_back(std::move(a));
    }
  }
  out.timing.attack_s = seconds_since(ta);

  if (rec.status == "ok") {
    const std::string key = partition_key(cell.plan, cell.seed);
    if (cell.baseline) impl_->baseline_mp[key] = *rec.mp;
    if (impl_->baseline_mp.count(key)) rec.mp_ref = impl_->baseline_mp.at(key);
  }
  score(rec, cfg.metrics.weights);

  if (cfg.archive == ArchiveMode::Attack) {
    out.archived = std::move(used);
  }
  if (cfg.archive != ArchiveMode::None && rec.status == "ok") rec.transcript = "transcripts/" + stem + ".slt";
  if (rec.status == "ok") {
    rec.checkpoint = fine_tunes(cfg) ? "checkpoints/" + stem + ".ckpt"
                     : "cache/" + (impl_->deployed_file.empty() ? impl_->backbone_file : impl_->deployed_file);
  }

  if (options_.write_outputs && rec.status == "ok") {
    if (!rec.transcript.empty()) {
      std::filesystem::create_directories(options_.out_dir / "transcripts");
      std::ofstream f(options_.out_dir / rec.transcript, std::ios::binary);
      f << encode_stream(out.archived);
    }
    if (fine_tunes(cfg)) {
      std::filesystem::create_directories(options_.out_dir / "checkpoints");
      NamedParams params = final_head->named_parameters();
      if (final_tail) {
        for (auto& p : final_tail->named_parameters()) params.push_back(p);
      }
      std::ofstream f(options_.out_dir / rec.checkpoint, std::ios::binary);
      f << encode_checkpoint(params, {{"config", mcfg.to_json()},
                                      {"meta", {{"cell", cell.id}, {"party", "data"}, {"partition", rec.partition}}}});
    }
  }
  out.timing.total_s = seconds_since(t0);
  return out;
}

std::vector<RunRecord> ExperimentRunner::run() {
  if (!options_.listen.empty()) throw ConfigError("run: a listening process serves; use serve()");
  const std::vector<Cell> cells = enumerate_cells(config_);
  std::vector<RunRecord> records;
  if (options_.write_outputs) {
    std::filesystem::create_directories(options_.out_dir);
    std::ofstream(options_.out_dir / "config.json") << config_.to_json().dump(2) << "\n";
  }
  for (const Cell& cell : cells) {
    CellOutcome o = run_cell(cell);
    if (options_.log) {
      auto& log = *options_.log;
      log << "[" << (cell.index + 1) << "/" << cells.size() << "] " << cell.id << " " << o.record.status;
      if (o.record.mp) log << " mp=" << *o.record.mp;
      for (const auto& a : o.record.attacks) {
        log << " " << a.kind << "=";
        if (a.ap) log << *a.ap; else log << "failed";
      }
      if (o.record.c_dcs) log << " c_dcs=" << *o.record.c_dcs;
      if (!o.record.error.empty()) log << " error: " << o.record.error;
      log << " (" << o.timing.total_s << " s)" << std::endl;
    }
    if (options_.write_outputs) write_record(options_.out_dir / "records", o.record, &o.timing);
    records.push_back(std::move(o.record));
  }
  if (options_.write_outputs) {
    std::ofstream(options_.out_dir / "results.csv") << records_csv(records);
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& a : aggregate(records)) summary.push_back(a.to_json());
    std::ofstream(options_.out_dir / "summary.json") << summary.dump(2) << "\n";
  }
  return records;
}

void ExperimentRunner::serve() {
  if (options_.listen.empty()) throw ConfigError("serve: no --listen address");
  const std::vector<Cell> cells = enumerate_cells(config_);
  TcpListener listener(options_.listen);
  if (options_.log) *options_.log << "model party listening on port " << listener.port() << std::endl;
  for (const Cell& cell : cells) {
    std::optional<ModelSlice> slice;
    std::string error;
    try {
      Transformer start = start_model(cell.seed);
      std::vector<ModelSlice> slices = partition(start, cell.plan);
      std::vector<ModelSlice*> data_slices{&slices[0]};
      if (cell.plan.mode == PartitionMode::HBT) data_slices.push_back(&slices[2]);
      if (fine_tunes(config_)) {
        configure_trainability(data_slices, {&slices[1]}, config_.strategy, config_.lora, cell.seed);
      } else {
        slices[1].set_trainable(false);
      }
      slice = std::move(slices[1]);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::unique_ptr<Channel> ch = listener.accept(kSessionTimeout);
    if (slice) {
      try {
        Endpoint ep(*ch, "model party");
        ModelParty party(cell.plan.mode, std::move(*slice), ep, party_options(config_, cell.seed));
        party.serve(cell.session_digest(impl_->digest));
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
    ch->close();
    if (options_.log) {
      *options_.log << "[" << (cell.index + 1) << "/" << cells.size() << "] served " << cell.id
                    << (error.empty() ? "" : " error: " + error) << std::endl;
    }
  }
}

}  // namespace splitbench
