// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/model.hpp"

#include <cmath>
#include <numeric>

#include "splitbench/errors.hpp"
#include "splitbench/ops.hpp"

namespace splitbench {
namespace {

constexpr float kInitStd = 0.02f;

Tensor normal_param(Shape shape, Rng rng, float std) {
  std::vector<float> data(numel_of(shape));
  for (float& v : data) v = static_cast<float>(rng.normal()) * std;
  return Tensor(std::move(shape), std::move(data), true);
}

Rng init_stream(std::uint64_t seed, const std::string& name) {
  return Rng(seed).split("init").split(name);
}

Linear make_linear(const std::string& name, std::size_t d_in, std::size_t d_out, std::uint64_t seed,
                   bool with_bias) {
  Linear l;
  l.name = name;
  l.weight = normal_param({d_in, d_out}, init_stream(seed, name + ".weight"), kInitStd);
  if (with_bias) l.bias = Tensor::zeros({d_out}, true);
  return l;
}

LayerNorm make_ln(std::size_t d) {
  return {Tensor::full({d}, 1.0f, true), Tensor::zeros({d}, true)};
}

Linear clone_linear(const Linear& l) {
  Linear c;
  c.name = l.name;
  c.weight = l.weight.clone();
  if (l.bias.defined()) c.bias = l.bias.clone();
  if (l.lora) {
    LoraAdapter a = *l.lora;
    a.a = l.lora->a.clone();
    a.b = l.lora->b.clone();
    c.lora = std::move(a);
  }
  return c;
}

LayerNorm clone_ln(const LayerNorm& n) { return {n.gamma.clone(), n.beta.clone()}; }

TransformerBlock clone_block(const TransformerBlock& b) {
  TransformerBlock c;
  c.index = b.index;
  c.ln1 = clone_ln(b.ln1);
  c.q = clone_linear(b.q);
  c.k = clone_linear(b.k);
  c.v = clone_linear(b.v);
  c.o = clone_linear(b.o);
  c.ln2 = clone_ln(b.ln2);
  c.ff_in = clone_linear(b.ff_in);
  c.ff_out = clone_linear(b.ff_out);
  return c;
}

Embeddings clone_embeddings(const Embeddings& e) { return {e.token.clone(), e.position.clone()}; }

TaskHead clone_head(const TaskHead& h) { return {h.kind, clone_ln(h.ln), clone_linear(h.proj)}; }

void push_linear(NamedParams& out, const Linear& l) {
  out.emplace_back(l.name + ".weight", l.weight);
  if (l.bias.defined()) out.emplace_back(l.name + ".bias", l.bias);
  if (l.lora) {
    out.emplace_back(l.name + ".lora_a", l.lora->a);
    out.emplace_back(l.name + ".lora_b", l.lora->b);
  }
}

void push_ln(NamedParams& out, const std::string& prefix, const LayerNorm& n) {
  out.emplace_back(prefix + ".gamma", n.gamma);
  out.emplace_back(prefix + ".beta", n.beta);
}

void push_block(NamedParams& out, const TransformerBlock& b) {
  const std::string p = "layers." + std::to_string(b.index);
  push_ln(out, p + ".ln1", b.ln1);
  push_linear(out, b.q);
  push_linear(out, b.k);
  push_linear(out, b.v);
  push_linear(out, b.o);
  push_ln(out, p + ".ln2", b.ln2);
  push_linear(out, b.ff_in);
  push_linear(out, b.ff_out);
}

void push_embeddings(NamedParams& out, const Embeddings& e) {
  out.emplace_back("embed.token", e.token);
  out.emplace_back("embed.position", e.position);
}

void push_head(NamedParams& out, const TaskHead& h) {
  push_ln(out, "head.ln", h.ln);
  push_linear(out, h.proj);
}

void set_all(const NamedParams& params, bool on) {
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    handle.set_requires_grad(on);
  }
}

void attach_lora_to_layers(std::vector<TransformerBlock>& layers, const LoraOptions& opts,
                           std::uint64_t seed) {
  if (opts.rank < 1) throw ConfigError("lora.rank must be >= 1");
  if (opts.dropout < 0.0f || opts.dropout >= 1.0f) {
    throw ConfigError("lora.dropout must be in [0, 1)");
  }
  if (opts.targets.empty()) throw ConfigError("lora.targets is empty");
  if (layers.empty()) {
    throw ConfigError("lora target '" + opts.targets.front() + "' is absent: slice has no layers");
  }
  for (TransformerBlock& block : layers) {
    for (const std::string& target : opts.targets) {
      Linear* lin = block.projection(target);
      if (lin == nullptr) throw ConfigError("lora target '" + target + "' is absent in slice");
      if (lin->lora) throw ConfigError("lora already attached to " + lin->name);
    }
  }
  for (TransformerBlock& block : layers) {
    for (const std::string& target : opts.targets) {
      Linear* lin = block.projection(target);
      const std::size_t d_in = lin->weight.dim(0), d_out = lin->weight.dim(1);
      const auto r = static_cast<std::size_t>(opts.rank);
      LoraAdapter a;
      a.rank = opts.rank;
      a.alpha = opts.alpha;
      a.dropout = opts.dropout;
      a.a = normal_param({d_in, r}, Rng(seed).split("lora").split(lin->name),
                         1.0f / std::sqrt(static_cast<float>(d_in)));
      a.b = Tensor::zeros({r, d_out}, true);
      lin->lora = std::move(a);
    }
  }
}

// Freezes everything, then re-enables adapters.
void freeze_base(const NamedParams& params) {
  for (const auto& [name, t] : params) {
    bool adapter = name.ends_with(".lora_a") || name.ends_with(".lora_b");
    Tensor handle = t;
    handle.set_requires_grad(adapter);
  }
}

Tensor embed_tokens_impl(const Embeddings& e, const TokenBatch& tokens, int max_seq) {
  if (tokens.ids.size() != tokens.batch * tokens.seq || tokens.batch == 0 || tokens.seq == 0) {
    throw ShapeError("token batch: ids length " + std::to_string(tokens.ids.size()) +
                     " does not match shape " + shape_str(tokens.shape()));
  }
  if (tokens.seq > static_cast<std::size_t>(max_seq)) {
    throw ShapeError("token batch: sequence length " + std::to_string(tokens.seq) +
                     " exceeds max_seq_len " + std::to_string(max_seq));
  }
  return ops::embedding(e.token, tokens.ids, tokens.shape());
}

Tensor add_positions(const Embeddings& e, const Tensor& tok, int max_seq) {
  if (tok.rank() != 3 || tok.dim(2) != e.token.dim(1)) {
    throw ShapeError("token embeddings: expected [B, S, " + std::to_string(e.token.dim(1)) +
                     "], got " + shape_str(tok.shape()));
  }
  const std::size_t seq = tok.dim(1);
  if (seq > static_cast<std::size_t>(max_seq)) {
    throw ShapeError("sequence length " + std::to_string(seq) + " exceeds max_seq_len");
  }
  std::vector<std::int32_t> pos(seq);
  std::iota(pos.begin(), pos.end(), 0);
  Tensor p = ops::embedding(e.position, pos, {seq});
  return ops::add(tok, p);
}

Tensor head_forward(const TaskHead& h, const Tensor& hidden, const ForwardContext& ctx) {
  Tensor x = h.ln.forward(hidden);
  if (h.kind == TaskHeadKind::Classification) x = ops::select_position(x, 0);
  return h.proj.forward(x, ctx);
}

Tensor run_blocks(const std::vector<TransformerBlock>& layers, const TransformerConfig& cfg,
                  Tensor x, const ForwardContext& ctx) {
  for (const TransformerBlock& b : layers) x = b.forward(x, cfg.n_heads, cfg.causal(), ctx);
  return x;
}

}  // namespace

std::string to_string(Arch a) { return a == Arch::EncoderOnly ? "encoder-only" : "decoder-only"; }

Arch parse_arch(const std::string& s) {
  if (s == "encoder-only" || s == "encoder") return Arch::EncoderOnly;
  if (s == "decoder-only" || s == "decoder") return Arch::DecoderOnly;
  throw ConfigError("model.arch: unknown value '" + s + "'");
}

std::string to_string(SliceRole r) {
  switch (r) {
    case SliceRole::Head: return "head";
    case SliceRole::Body: return "body";
    case SliceRole::Tail: return "tail";
  }
  return "?";
}

void TransformerConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("model.") + field + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_seq_len, "max_seq_len");
  if (n_layers < 3) throw ConfigError("model.n_layers must be >= 3");
  if (d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" + std::to_string(n_heads) + ")");
  }
  if (num_classes && *num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
}

nlohmann::json TransformerConfig::to_json() const {
  nlohmann::json j{{"arch", to_string(arch)}, {"vocab_size", vocab_size}, {"d_model", d_model},
                   {"n_layers", n_layers},    {"n_heads", n_heads},       {"d_ff", d_ff},
                   {"max_seq_len", max_seq_len}};
  if (num_classes) j["num_classes"] = *num_classes;
  return j;
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.arch = parse_arch(j.value("arch", std::string("encoder-only")));
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  if (j.contains("num_classes") && !j["num_classes"].is_null()) {
    c.num_classes = j["num_classes"].get<int>();
  }
  return c;
}

TokenBatch TokenBatch::row(std::size_t b) const {
  TokenBatch r;
  r.batch = 1;
  r.seq = seq;
  r.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(b * seq),
               ids.begin() + static_cast<std::ptrdiff_t>((b + 1) * seq));
  return r;
}

nlohmann::json LoraOptions::to_json() const {
  return {{"targets", targets}, {"rank", rank}, {"alpha", alpha}, {"dropout", dropout}};
}

LoraOptions LoraOptions::from_json(const nlohmann::json& j) {
  LoraOptions o;
  o.targets = j.value("targets", o.targets);
  o.rank = j.value("rank", o.rank);
  o.alpha = j.value("alpha", o.alpha);
  o.dropout = j.value("dropout", o.dropout);
  return o;
}

std::size_t count_elements(const NamedParams& params, bool trainable_only) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) {
    if (!trainable_only || t.requires_grad()) n += t.numel();
  }
  return n;
}

Tensor Linear::forward(const Tensor& x, const ForwardContext& ctx) const {
  Tensor y = ops::matmul(x, weight);
  if (bias.defined()) y = ops::add(y, bias);
  if (lora) {
    Rng rng = ctx.stream.split(name);
    Tensor xi = ops::dropout(x, lora->dropout, rng, ctx.training);
    Tensor delta = ops::matmul(ops::matmul(xi, lora->a), lora->b);
    y = ops::add(y, ops::scale(delta, lora->scaling()));
  }
  return y;
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

Tensor TransformerBlock::forward(const Tensor& x, int n_heads, bool causal,
                                 const ForwardContext& ctx) const {
  Tensor h = ln1.forward(x);
  Tensor a = ops::attention(q.forward(h, ctx), k.forward(h, ctx), v.forward(h, ctx),
                            static_cast<std::size_t>(n_heads), causal);
  Tensor x1 = ops::add(x, o.forward(a, ctx));
  Tensor f = ff_out.forward(ops::gelu(ff_in.forward(ln2.forward(x1), ctx)), ctx);
  return ops::add(x1, f);
}

Linear* TransformerBlock::projection(const std::string& target) {
  if (target == "q") return &q;
  if (target == "k") return &k;
  if (target == "v") return &v;
  if (target == "o") return &o;
  if (target == "ff_in") return &ff_in;
  if (target == "ff_out") return &ff_out;
  return nullptr;
}

Transformer Transformer::build(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  Transformer m;
  m.config_ = config;
  const auto V = static_cast<std::size_t>(config.vocab_size);
  const auto D = static_cast<std::size_t>(config.d_model);
  const auto F = static_cast<std::size_t>(config.d_ff);
  const auto S = static_cast<std::size_t>(config.max_seq_len);
  m.embeddings.token = normal_param({V, D}, init_stream(seed, "embed.token"), kInitStd);
  m.embeddings.position = normal_param({S, D}, init_stream(seed, "embed.position"), kInitStd);
  for (int i = 0; i < config.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    TransformerBlock b;
    b.index = i;
    b.ln1 = make_ln(D);
    b.q = make_linear(p + ".attn.q", D, D, seed, true);
    b.k = make_linear(p + ".attn.k", D, D, seed, true);
    b.v = make_linear(p + ".attn.v", D, D, seed, true);
    b.o = make_linear(p + ".attn.o", D, D, seed, true);
    b.ln2 = make_ln(D);
    b.ff_in = make_linear(p + ".ff_in", D, F, seed, true);
    b.ff_out = make_linear(p + ".ff_out", F, D, seed, true);
    m.layers.push_back(std::move(b));
  }
  m.head.kind = config.task_head();
  m.head.ln = make_ln(D);
  if (m.head.kind == TaskHeadKind::Classification) {
    m.head.proj = make_linear("head.proj", D, static_cast<std::size_t>(*config.num_classes), seed, true);
  } else {
    m.head.proj = make_linear("head.proj", D, V, seed, false);
  }
  return m;
}

Tensor Transformer::forward(const TokenBatch& tokens, const ForwardContext& ctx) const {
  Tensor x = add_positions(embeddings, embed_tokens_impl(embeddings, tokens, config_.max_seq_len),
                           config_.max_seq_len);
  x = run_blocks(layers, config_, x, ctx);
  return head_forward(head, x, ctx);
}

NamedParams Transformer::named_parameters() const {
  NamedParams out;
  push_embeddings(out, embeddings);
  for (const auto& b : layers) push_block(out, b);
  push_head(out, head);
  return out;
}

void Transformer::set_trainable(bool on) { set_all(named_parameters(), on); }

void Transformer::attach_lora(const LoraOptions& opts, std::uint64_t seed) {
  attach_lora_to_layers(layers, opts, seed);
  freeze_base(named_parameters());
}

void Transformer::load_state(const std::map<std::string, Tensor>& state) {
  for (auto& [name, t] : named_parameters()) {
    auto it = state.find(name);
    if (it == state.end()) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "': checkpoint shape " +
                       shape_str(it->second.shape()) + " vs model shape " + shape_str(t.shape()));
    }
    Tensor dst = t;
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.data().begin());
  }
}

Transformer Transformer::clone() const {
  Transformer c;
  c.config_ = config_;
  c.embeddings = clone_embeddings(embeddings);
  for (const auto& b : layers) c.layers.push_back(clone_block(b));
  c.head = clone_head(head);
  return c;
}

ModelSlice::ModelSlice(SliceRole role, TransformerConfig config, std::optional<Embeddings> embeddings,
                       std::vector<TransformerBlock> layers, std::optional<TaskHead> task_head,
                       int layer_begin, int layer_end)
    : role_(role),
      config_(std::move(config)),
      embeddings_(std::move(embeddings)),
      layers_(std::move(layers)),
      task_head_(std::move(task_head)),
      layer_begin_(layer_begin),
      layer_end_(layer_end) {
  const bool ok = (role_ == SliceRole::Head && embeddings_ && !task_head_) ||
                  (role_ == SliceRole::Body && !embeddings_ && !task_head_) ||
                  (role_ == SliceRole::Tail && !embeddings_ && task_head_);
  if (!ok) throw ConfigError("slice layout does not match role " + to_string(role_));
  if (static_cast<int>(layers_.size()) != layer_end_ - layer_begin_) {
    throw ConfigError("slice layer range does not match its layers");
  }
}

Tensor ModelSlice::forward(const SliceInput& input, const ForwardContext& ctx) const {
  if (role_ == SliceRole::Head) {
    const auto* tokens = std::get_if<TokenBatch>(&input);
    if (tokens == nullptr) throw ShapeError("head slice expects token ids, got hidden states");
    return forward_from_embeddings(embed_tokens(*tokens), ctx);
  }
  const auto* hidden = std::get_if<Tensor>(&input);
  if (hidden == nullptr) {
    throw ShapeError(to_string(role_) + " slice expects hidden states, got token ids");
  }
  Tensor x = run_layers(*hidden, ctx);
  return role_ == SliceRole::Tail ? apply_task_head(x, ctx) : x;
}

Tensor ModelSlice::embed_tokens(const TokenBatch& tokens) const {
  if (!embeddings_) throw ShapeError(to_string(role_) + " slice has no embedding layer");
  return embed_tokens_impl(*embeddings_, tokens, config_.max_seq_len);
}

Tensor ModelSlice::forward_from_embeddings(const Tensor& token_embeddings,
                                           const ForwardContext& ctx) const {
  if (!embeddings_) throw ShapeError(to_string(role_) + " slice has no embedding layer");
  Tensor x = add_positions(*embeddings_, token_embeddings, config_.max_seq_len);
  return run_blocks(layers_, config_, x, ctx);
}

const Tensor& ModelSlice::embedding_table() const {
  if (!embeddings_) throw ShapeError(to_string(role_) + " slice has no embedding layer");
  return embeddings_->token;
}

Tensor ModelSlice::run_layers(const Tensor& hidden, const ForwardContext& ctx) const {
  const auto D = static_cast<std::size_t>(config_.d_model);
  if (hidden.rank() != 3 || hidden.dim(2) != D) {
    throw ShapeError(to_string(role_) + " slice: expected hidden states [B, S, " +
                     std::to_string(D) + "], got " + shape_str(hidden.shape()));
  }
  return run_blocks(layers_, config_, hidden, ctx);
}

Tensor ModelSlice::apply_task_head(const Tensor& hidden, const ForwardContext& ctx) const {
  if (!task_head_) throw ShapeError(to_string(role_) + " slice has no task head");
  return head_forward(*task_head_, hidden, ctx);
}

void ModelSlice::set_trainable(bool on) { set_all(named_parameters(), on); }

void ModelSlice::attach_lora(const LoraOptions& opts, std::uint64_t seed) {
  attach_lora_to_layers(layers_, opts, seed);
  freeze_base(named_parameters());
}

bool ModelSlice::has_lora() const {
  for (const auto& b : layers_) {
    if (b.q.lora || b.k.lora || b.v.lora || b.o.lora || b.ff_in.lora || b.ff_out.lora) return true;
  }
  return false;
}

NamedParams ModelSlice::named_parameters() const {
  NamedParams out;
  if (embeddings_) push_embeddings(out, *embeddings_);
  for (const auto& b : layers_) push_block(out, b);
  if (task_head_) push_head(out, *task_head_);
  return out;
}

std::vector<Tensor> ModelSlice::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters()) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

ModelSlice ModelSlice::clone() const {
  std::optional<Embeddings> e;
  if (embeddings_) e = clone_embeddings(*embeddings_);
  std::vector<TransformerBlock> ls;
  for (const auto& b : layers_) ls.push_back(clone_block(b));
  std::optional<TaskHead> h;
  if (task_head_) h = clone_head(*task_head_);
  return ModelSlice(role_, config_, std::move(e), std::move(ls), std::move(h), layer_begin_,
                    layer_end_);
}

namespace {

std::vector<TransformerBlock> copy_layers(const Transformer& m, int begin, int end) {
  std::vector<TransformerBlock> out;
  for (int i = begin; i < end; ++i) out.push_back(clone_block(m.layers[static_cast<std::size_t>(i)]));
  return out;
}

}  // namespace

std::vector<ModelSlice> partition(const Transformer& model, const PartitionPlan& plan) {
  const TransformerConfig& cfg = model.config();
  plan.validate(cfg.n_layers);
  std::vector<ModelSlice> out;
  out.push_back(make_head(model, plan.n_head));
  int cursor = plan.n_head;
  if (plan.mode == PartitionMode::HBT) {
    out.emplace_back(SliceRole::Body, cfg, std::nullopt,
                     copy_layers(model, cursor, cursor + plan.n_body), std::nullopt, cursor,
                     cursor + plan.n_body);
    cursor += plan.n_body;
  }
  out.emplace_back(SliceRole::Tail, cfg, std::nullopt, copy_layers(model, cursor, cfg.n_layers),
                   clone_head(model.head), cursor, cfg.n_layers);
  return out;
}

ModelSlice make_head(const Transformer& model, int n_layers) {
  if (n_layers < 0 || n_layers > model.config().n_layers) {
    throw ConfigError("head layer count out of range");
  }
  return ModelSlice(SliceRole::Head, model.config(), clone_embeddings(model.embeddings),
                    copy_layers(model, 0, n_layers), std::nullopt, 0, n_layers);
}

}  // namespace splitbench
