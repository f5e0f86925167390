// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/protocol.hpp"

#include <chrono>

#include "splitbench/errors.hpp"
#include "splitbench/ops.hpp"

namespace splitbench {
namespace {

std::unique_ptr<Optimizer> optimizer_for(std::vector<Tensor> params, const PartyOptions& o) {
  if (params.empty()) return nullptr;
  return make_optimizer(o.optimizer, std::move(params), o.lr);
}

void step_if(std::unique_ptr<Optimizer>& opt) {
  if (opt) opt->step();
}

class WallClock {
 public:
  explicit WallClock(TrafficMeter& m) : meter_(m), start_(std::chrono::steady_clock::now()) {}
  ~WallClock() {
    meter_.wall_time +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  TrafficMeter& meter_;
  std::chrono::steady_clock::time_point start_;
};

void check_same_shape(const Tensor& got, const Shape& want, const char* what) {
  if (got.shape() != want) {
    throw ShapeError(std::string(what) + ": received shape " + shape_str(got.shape()) +
                     ", expected " + shape_str(want));
  }
}

}  // namespace

std::string FinetuneStrategy::name() const {
  return std::string(scope == Scope::Full ? "Full" : "Local") + "-" +
         (method == Method::Vanilla ? "Vanilla" : "LoRA");
}

FinetuneStrategy FinetuneStrategy::parse(const std::string& s) {
  for (Scope sc : {Scope::Full, Scope::Local}) {
    for (Method me : {Method::Vanilla, Method::LoRA}) {
      FinetuneStrategy f{sc, me};
      if (f.name() == s) return f;
    }
  }
  throw ConfigError("strategy: unknown value '" + s + "'");
}

std::vector<std::int32_t> next_token_targets(const TokenBatch& x) {
  std::vector<std::int32_t> t(x.batch * x.seq, kIgnoreTarget);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t s = 0; s + 1 < x.seq; ++s) {
      const std::int32_t cur = x.at(b, s), nxt = x.at(b, s + 1);
      if (cur != kPadToken && nxt != kPadToken) t[b * x.seq + s] = nxt;
    }
  }
  return t;
}

Tensor task_loss(const Tensor& logits, const std::vector<std::int32_t>& targets) {
  return ops::cross_entropy(logits, targets, kIgnoreTarget);
}

Rng step_stream(std::uint64_t seed, std::uint64_t step) {
  return Rng(seed).split("dropout").split(step);
}

void configure_trainability(const std::vector<ModelSlice*>& data_slices,
                            const std::vector<ModelSlice*>& model_slices,
                            const FinetuneStrategy& strategy, const LoraOptions& lora,
                            std::uint64_t seed) {
  for (ModelSlice* s : data_slices) {
    if (strategy.method == Method::LoRA) {
      s->attach_lora(lora, seed);
    } else {
      s->set_trainable(true);
    }
  }
  for (ModelSlice* s : model_slices) {
    if (strategy.scope == Scope::Local) {
      s->set_trainable(false);
    } else if (strategy.method == Method::LoRA) {
      s->attach_lora(lora, seed);
    } else {
      s->set_trainable(true);
    }
  }
}

DataParty::DataParty(PartitionMode mode, ModelSlice head, std::optional<ModelSlice> tail,
                     Endpoint& endpoint, PartyOptions options, DefenseStack* defenses)
    : mode_(mode),
      head_(std::move(head)),
      tail_(std::move(tail)),
      endpoint_(endpoint),
      options_(options),
      defenses_(defenses) {
  if (head_.role() != SliceRole::Head) throw ConfigError("data party: first slice must be the head");
  if ((mode_ == PartitionMode::HBT) != tail_.has_value()) {
    throw ConfigError("data party: owns a tail exactly in HBT mode");
  }
  head_opt_ = optimizer_for(head_.trainable_parameters(), options_);
  if (tail_) tail_opt_ = optimizer_for(tail_->trainable_parameters(), options_);
  if (defenses_) defense_opt_ = optimizer_for(defenses_->parameters(), options_);
}

void DataParty::start(std::uint64_t config_digest) { endpoint_.hello(config_digest); }

void DataParty::finish() {
  endpoint_.send(ProtocolMessage::make_control(ControlKind::Shutdown, 0));
}

void DataParty::set_mode(bool training, std::uint64_t step) {
  if (mode_sent_ == training) return;
  endpoint_.send(ProtocolMessage::make_control(ControlKind::SetMode, step,
                                               std::string(1, training ? '\1' : '\0')));
  mode_sent_ = training;
}

void DataParty::count_tokens(const TokenBatch& x) {
  for (auto id : x.ids) endpoint_.channel().meter().tokens_processed += (id != kPadToken);
}

Tensor DataParty::head_forward(const TokenBatch& x, const HookContext& ctx, const ForwardContext& fctx) {
  if (!defenses_) return head_.forward(x, fctx);
  TokenBatch xp = defenses_->apply_tokens(x, ctx);
  Tensor e = defenses_->apply_token_embeddings(head_.embed_tokens(xp), ctx);
  Tensor h = head_.forward_from_embeddings(e, fctx);
  return defenses_->apply_head_output(h, ctx);
}

StepResult DataParty::train_step(const Batch& batch, std::uint64_t step) {
  WallClock clock(endpoint_.channel().meter());
  set_mode(true, step);
  count_tokens(batch.x);
  const HookContext hctx{step, true, &batch.x, &batch.targets};
  const ForwardContext fctx{true, step_stream(options_.seed, step)};

  Tensor h1 = head_forward(batch.x, hctx, fctx);
  endpoint_.send(ProtocolMessage::tensor(MsgType::ForwardH1, step, h1));

  StepResult result;
  Tensor g1;
  if (mode_ == PartitionMode::HT) {
    ProtocolMessage pred = endpoint_.expect({MsgType::ForwardPred}, step);
    Tensor y_hat = pred.to_tensor(true);
    Tensor logits = defenses_ ? defenses_->apply_returned(y_hat, hctx) : y_hat;
    Tensor loss = task_loss(logits, batch.targets);
    loss.backward();
    result.loss = loss.item();
    result.logits = logits.detach();
    g1 = Tensor(y_hat.shape(), {y_hat.grad().begin(), y_hat.grad().end()});
  } else {
    ProtocolMessage m = endpoint_.expect({MsgType::ForwardH2}, step);
    Tensor h2 = m.to_tensor(true);
    check_same_shape(h2, h1.shape(), "H2");
    Tensor r = defenses_ ? defenses_->apply_returned(h2, hctx) : h2;
    Tensor logits = tail_->forward(r, fctx);
    Tensor loss = task_loss(logits, batch.targets);
    result.loss = loss.item();
    result.logits = logits.detach();
    if (defenses_) {
      for (const Tensor& reg : defenses_->take_regularizers()) loss = ops::add(loss, reg);
    }
    loss.backward();
    g1 = Tensor(h2.shape(), {h2.grad().begin(), h2.grad().end()});
  }
  if (defenses_) g1 = defenses_->apply_boundary_gradient(g1, hctx);
  endpoint_.send(ProtocolMessage::tensor(MsgType::GradG1, step, g1));
  step_if(tail_opt_);

  ProtocolMessage gm = endpoint_.expect({MsgType::GradG2}, step);
  Tensor g2 = gm.to_tensor();
  check_same_shape(g2, h1.shape(), "G2");
  if (h1.requires_grad()) {
    Tensor surrogate = ops::sum(ops::mul(h1, g2));
    if (defenses_) {
      for (const Tensor& reg : defenses_->take_regularizers()) {
        surrogate = ops::add(surrogate, reg);
      }
    }
    surrogate.backward();
  }
  step_if(head_opt_);
  if (defenses_) {
    step_if(defense_opt_);
    defenses_->after_update(hctx);
  }
  return result;
}

Tensor DataParty::infer(const TokenBatch& x, std::uint64_t step) {
  WallClock clock(endpoint_.channel().meter());
  set_mode(false, step);
  count_tokens(x);
  const HookContext hctx{step, false, &x};
  const ForwardContext fctx{false, Rng(0)};
  Tensor h1 = head_forward(x, hctx, fctx).detach();
  endpoint_.send(ProtocolMessage::tensor(MsgType::ForwardH1, step, h1));
  Tensor logits;
  if (mode_ == PartitionMode::HT) {
    Tensor y_hat = endpoint_.expect({MsgType::ForwardPred}, step).to_tensor();
    logits = defenses_ ? defenses_->apply_returned(y_hat, hctx) : y_hat;
  } else {
    Tensor h2 = endpoint_.expect({MsgType::ForwardH2}, step).to_tensor();
    check_same_shape(h2, h1.shape(), "H2");
    Tensor r = defenses_ ? defenses_->apply_returned(h2, hctx) : h2;
    logits = tail_->forward(r, fctx);
  }
  if (defenses_) defenses_->take_regularizers();
  return logits.detach();
}

ModelParty::ModelParty(PartitionMode mode, ModelSlice slice, Endpoint& endpoint, PartyOptions options)
    : mode_(mode), slice_(std::move(slice)), endpoint_(endpoint), options_(options) {
  const SliceRole want = mode_ == PartitionMode::HT ? SliceRole::Tail : SliceRole::Body;
  if (slice_.role() != want) {
    throw ConfigError("model party: expected a " + to_string(want) + " slice");
  }
  opt_ = optimizer_for(slice_.trainable_parameters(), options_);
}

void ModelParty::serve(std::uint64_t config_digest) {
  endpoint_.accept_hello(config_digest);
  const MsgType reply = mode_ == PartitionMode::HT ? MsgType::ForwardPred : MsgType::ForwardH2;
  bool training = false;
  std::optional<std::uint64_t> last_step;
  while (true) {
    ProtocolMessage m = endpoint_.recv();
    if (m.type == MsgType::Control) {
      ControlKind k = m.control_kind();
      if (k == ControlKind::Shutdown) return;
      if (k == ControlKind::SetMode) {
        training = !m.control_body().empty() && m.control_body()[0] != '\0';
        continue;
      }
      throw ProtocolError(endpoint_.party() + ": unexpected control message");
    }
    if (m.type != MsgType::ForwardH1) {
      throw ProtocolError(endpoint_.party() + ": expected ForwardH1|Control, received " +
                          to_string(m.type));
    }
    if (last_step && m.step <= *last_step) {
      throw ProtocolError(endpoint_.party() + ": step " + std::to_string(m.step) +
                          " does not advance past " + std::to_string(*last_step));
    }
    last_step = m.step;
    const std::uint64_t step = m.step;
    const auto D = static_cast<std::size_t>(slice_.config().d_model);
    Tensor h = m.to_tensor(training);
    if (h.rank() != 3 || h.dim(2) != D) {
      throw ShapeError(endpoint_.party() + ": H1 has shape " + shape_str(h.shape()));
    }
    const ForwardContext fctx{training, training ? step_stream(options_.seed, step) : Rng(0)};
    Tensor out = slice_.forward(h, fctx);
    endpoint_.send(ProtocolMessage::tensor(reply, step, out));
    if (!training) continue;

    ProtocolMessage g = endpoint_.expect({MsgType::GradG1}, step);
    Tensor g1 = g.to_tensor();
    check_same_shape(g1, out.shape(), "G1");
    out.backward(g1.data());
    Tensor g2(h.shape(), {h.grad().begin(), h.grad().end()});
    step_if(opt_);
    endpoint_.send(ProtocolMessage::tensor(MsgType::GradG2, step, g2));
  }
}

}  // namespace splitbench
