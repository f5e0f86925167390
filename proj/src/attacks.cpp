// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "splitbench/errors.hpp"
#include "splitbench/ops.hpp"
#include "splitbench/optim.hpp"

namespace splitbench {
namespace {

constexpr const char* kAttackNames[] = {"VMI", "RMI", "BiSR", "BLI", "NS"};

Tensor gaussian(Shape shape, double std, Rng& rng, bool requires_grad) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * std);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// The attacker's copy; its weights are never updated.
ModelSlice frozen(const ModelSlice& s) {
  ModelSlice c = s.clone();
  c.set_trainable(false);
  return c;
}

void check_observed(const Tensor& observed, const ModelSlice& head) {
  if (observed.rank() != 3 || observed.dim(2) != static_cast<std::size_t>(head.config().d_model)) {
    throw ShapeError("inversion: observed tensor has shape " + shape_str(observed.shape()) +
                     ", expected [B, S, d_model]");
  }
  if (!head.has_embedding()) throw AttackError("inversion: white-box head has no embedding table");
}

Tensor inversion_loss(const Tensor& out, const Tensor& observed) {
  return ops::scale(ops::sum_squares(ops::sub(out, observed)), 1.0f / static_cast<float>(observed.dim(0)));
}

// Runs `epochs` Adam steps on `var`; records the loss before every step and
// once after the last.
template <class LossFn>
void optimise(Tensor var, int epochs, double lr, LossFn loss_fn, InversionResult& r) {
  Adam opt({var}, lr);
  try {
    for (int e = 0; e <= epochs; ++e) {
      Tensor loss = loss_fn();
      const double v = loss.item();
      r.loss_trace.push_back(v);
      if (!std::isfinite(v)) throw NumericError("loss is not finite");
      if (e == epochs) break;
      loss.backward();
      opt.step();
    }
  } catch (const NumericError& e) {
    r.failed = true;
    r.failure = e.what();
  }
}

std::vector<std::vector<std::int32_t>> split_rows(const std::vector<std::int32_t>& ids, std::size_t batch) {
  const std::size_t seq = batch ? ids.size() / batch : 0;
  std::vector<std::vector<std::int32_t>> out(batch);
  for (std::size_t b = 0; b < batch; ++b) out[b].assign(ids.begin() + b * seq, ids.begin() + (b + 1) * seq);
  return out;
}

Tensor row_of(const Tensor& t, std::size_t b) {
  Shape shape = t.shape();
  const std::size_t n = t.numel() / shape[0];
  shape[0] = 1;
  auto d = t.data();
  return Tensor(shape, std::vector<float>(d.begin() + b * n, d.begin() + (b + 1) * n));
}

void normalise(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  if (s <= 0.0) return;
  const double inv = 1.0 / std::sqrt(s);
  for (float& x : v) x = static_cast<float>(x * inv);
}

}  // namespace

std::string to_string(AttackKind k) { return kAttackNames[static_cast<int>(k)]; }

AttackKind parse_attack_kind(const std::string& s) {
  for (int i = 0; i < 5; ++i) {
    if (s == kAttackNames[i]) return static_cast<AttackKind>(i);
  }
  throw ConfigError("attack.kind: unknown value '" + s + "'");
}

bool is_mia(AttackKind k) { return k == AttackKind::VMI || k == AttackKind::RMI || k == AttackKind::BiSR; }

AttackSpec AttackSpec::defaults(AttackKind k, Phase phase) {
  AttackSpec s;
  s.kind = k;
  s.phase = is_mia(k) ? phase : Phase::Training;
  switch (k) {
    case AttackKind::VMI: s.epochs = 100, s.lr = 0.01; break;
    case AttackKind::RMI: s.epochs = 500, s.lr = 0.005; break;
    case AttackKind::BiSR: s.epochs = 100, s.lr = 0.01; break;
    case AttackKind::BLI: s.epochs = 500, s.lr = 0.05; break;
    case AttackKind::NS: s.epochs = 0, s.lr = 0.0; break;
  }
  return s;
}

void AttackSpec::validate() const {
  const std::string who = "attack " + to_string(kind) + ": ";
  if (!is_mia(kind) && phase != Phase::Training) {
    throw ConfigError(who + "label inference needs training-phase gradients");
  }
  if (epochs < 0) throw ConfigError(who + "epochs must be >= 0");
  if (kind != AttackKind::NS && !(lr > 0)) throw ConfigError(who + "lr must be > 0");
  if (kind == AttackKind::RMI && !(temperature > 0)) throw ConfigError(who + "temperature must be > 0");
  if (kind == AttackKind::BiSR && aux_samples <= 0) throw ConfigError(who + "aux_samples must be > 0");
  if (max_samples <= 0) throw ConfigError(who + "max_samples must be > 0");
}

nlohmann::json AttackSpec::to_json() const {
  return {{"kind", to_string(kind)},     {"phase", to_string(phase)},
          {"epochs", epochs},            {"lr", lr},
          {"temperature", temperature},  {"aux_samples", aux_samples},
          {"pretrain_epochs", pretrain_epochs}, {"max_samples", max_samples}};
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
  const AttackKind kind = parse_attack_kind(j.at("kind").get<std::string>());
  AttackSpec s = defaults(kind, j.contains("phase") ? parse_phase(j.at("phase").get<std::string>())
                                                    : Phase::Inference);
  if (j.contains("phase")) s.phase = parse_phase(j.at("phase").get<std::string>());
  s.epochs = j.value("epochs", s.epochs);
  s.lr = j.value("lr", s.lr);
  s.temperature = j.value("temperature", s.temperature);
  s.aux_samples = j.value("aux_samples", s.aux_samples);
  s.pretrain_epochs = j.value("pretrain_epochs", s.pretrain_epochs);
  s.max_samples = j.value("max_samples", s.max_samples);
  s.validate();
  return s;
}

std::vector<std::int32_t> decode_by_cosine(const Tensor& emb, const Tensor& table) {
  const std::size_t D = table.dim(1), V = table.dim(0);
  if (emb.shape().back() != D) throw ShapeError("decode: embedding width differs from the table");
  const std::size_t rows = emb.numel() / D;
  auto e = emb.data();
  auto t = table.data();
  std::vector<double> tnorm(V);
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += static_cast<double>(t[v * D + j]) * t[v * D + j];
    tnorm[v] = std::sqrt(s);
  }
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double en = 0.0;
    for (std::size_t j = 0; j < D; ++j) en += static_cast<double>(e[r * D + j]) * e[r * D + j];
    en = std::sqrt(en);
    double best = -std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (std::size_t v = 0; v < V; ++v) {
      double dot = 0.0;
      for (std::size_t j = 0; j < D; ++j) dot += static_cast<double>(e[r * D + j]) * t[v * D + j];
      const double denom = en * tnorm[v];
      const double c = denom > 0 ? dot / denom : 0.0;
      if (c > best) {
        best = c;
        arg = static_cast<std::int32_t>(v);
      }
    }
    out[r] = arg;
  }
  return out;
}

InversionResult vmi(const Tensor& observed, const ModelSlice& head, int epochs, double lr, Rng rng,
                    const std::optional<Tensor>& init) {
  check_observed(observed, head);
  const ModelSlice h = frozen(head);
  const Tensor target = observed.detach();
  Tensor x = init ? Tensor(init->shape(), {init->data().begin(), init->data().end()}, true)
                  : gaussian(observed.shape(), 0.02, rng, true);
  if (x.shape() != observed.shape()) throw ShapeError("vmi: initial embeddings have the wrong shape");
  InversionResult r;
  optimise(x, epochs, lr, [&] { return inversion_loss(h.forward_from_embeddings(x, {}), target); }, r);
  if (r.failed) return r;
  r.recovered = split_rows(decode_by_cosine(x.detach(), h.embedding_table()), observed.dim(0));
  return r;
}

InversionResult rmi(const Tensor& observed, const ModelSlice& head, int epochs, double lr, double temperature,
                    Rng rng, const std::optional<Tensor>& init_logits) {
  check_observed(observed, head);
  const ModelSlice h = frozen(head);
  const Tensor target = observed.detach();
  const Tensor table = h.embedding_table().detach();
  const std::size_t B = observed.dim(0), S = observed.dim(1), V = table.dim(0);
  Tensor z = init_logits ? Tensor(init_logits->shape(), {init_logits->data().begin(), init_logits->data().end()}, true)
                         : gaussian({B, S, V}, 0.02, rng, true);
  if (z.shape() != Shape({B, S, V})) throw ShapeError("rmi: initial logits have the wrong shape");
  const float inv_t = static_cast<float>(1.0 / temperature);
  InversionResult r;
  optimise(z, epochs, lr, [&] {
    Tensor e = ops::matmul(ops::softmax(ops::scale(z, inv_t)), table);
    return inversion_loss(h.forward_from_embeddings(e, {}), target);
  }, r);
  if (r.failed) return r;
  std::vector<std::int32_t> ids(B * S);
  auto zd = z.data();
  for (std::size_t i = 0; i < B * S; ++i) {
    ids[i] = static_cast<std::int32_t>(std::max_element(zd.begin() + i * V, zd.begin() + (i + 1) * V) -
                                       (zd.begin() + i * V));
  }
  r.recovered = split_rows(ids, B);
  return r;
}

Tensor InversionNet::forward(const Tensor& h) const { return net.forward(h); }

InversionNet pretrain_inversion(const ModelSlice& head, const std::vector<TokenBatch>& aux,
                                const NoiseModel& noise, int epochs, double lr, Rng rng) {
  if (aux.empty()) throw AttackError("bisr: auxiliary corpus is empty");
  const ModelSlice h = frozen(head);
  const auto D = static_cast<std::size_t>(h.config().d_model);
  InversionNet g{Mlp::make("bisr.inversion", D, 4 * D, D, rng.split("init"))};
  Adam opt(g.net.parameters(), lr);
  std::uint64_t step = 0;
  for (int e = 0; e < epochs; ++e) {
    for (const TokenBatch& x : aux) {
      Rng r = rng.split("noise").split(step++);
      Tensor clean = h.forward(x, {}).detach();
      Tensor seen = noise ? noise(clean, r).detach() : clean;
      Tensor target = h.embed_tokens(x).detach();
      Tensor loss = ops::mse_loss(g.forward(seen), target);
      loss.backward();
      opt.step();
    }
  }
  return g;
}

InversionResult bisr(const Tensor& observed, const ModelSlice& head, const std::vector<TokenBatch>& aux,
                     const NoiseModel& noise, int pretrain_epochs, int epochs, double lr, Rng rng) {
  check_observed(observed, head);
  InversionNet g = pretrain_inversion(head, aux, noise, pretrain_epochs, lr, rng.split("pretrain"));
  Tensor init = g.forward(observed.detach()).detach();
  return vmi(observed, head, epochs, lr, rng.split("vmi"), init);
}

std::vector<std::vector<float>> per_sample_rows(const Tensor& g) {
  if (g.rank() < 1 || g.dim(0) == 0) throw ShapeError("per-sample rows: empty gradient");
  const std::size_t B = g.dim(0), n = g.numel() / B;
  std::vector<std::vector<float>> out(B);
  auto d = g.data();
  for (std::size_t b = 0; b < B; ++b) out[b].assign(d.begin() + b * n, d.begin() + (b + 1) * n);
  return out;
}

std::vector<ShadowPair> bli_shadow_pairs(const Tensor& returned, const ModelSlice* tail, int num_classes) {
  if (num_classes < 2) throw AttackError("bli: needs a classification task");
  std::optional<ModelSlice> t;
  if (tail) {
    if (tail->task_head() != TaskHeadKind::Classification) throw AttackError("bli: tail is not a classifier");
    t = frozen(*tail);
  }
  std::vector<ShadowPair> out;
  for (std::size_t b = 0; b < returned.dim(0); ++b) {
    for (std::int32_t c = 0; c < num_classes; ++c) {
      Tensor leaf = row_of(returned, b);
      leaf = Tensor(leaf.shape(), {leaf.data().begin(), leaf.data().end()}, true);
      Tensor logits = t ? t->forward(leaf, {}) : leaf;
      const std::vector<std::int32_t> y{c};
      ops::cross_entropy(logits, y).backward();
      out.push_back({{leaf.grad().begin(), leaf.grad().end()}, c});
    }
  }
  return out;
}

LabelResult bli(const std::vector<std::vector<float>>& observed, const std::vector<ShadowPair>& shadow,
                int num_classes, int epochs, double lr, Rng rng) {
  if (observed.empty()) throw AttackError("bli: no gradient transcripts");
  if (shadow.empty()) throw AttackError("bli: no shadow pairs");
  const std::size_t dim = observed.front().size();
  for (const auto& s : shadow) {
    if (s.gradient.size() != dim) throw ShapeError("bli: shadow gradient width differs from observed");
  }
  // Wide gradients go through a fixed random projection first; direction is
  // what carries the label, and a Gaussian projection keeps it.
  constexpr std::size_t kMaxWidth = 256;
  const std::size_t width = std::min(dim, kMaxWidth);
  std::vector<float> proj;
  if (width < dim) {
    Rng pr = rng.split("projection");
    proj.resize(dim * width);
    for (auto& p : proj) p = static_cast<float>(pr.normal());
  }
  auto features = [&](const std::vector<std::vector<float>>& rows) {
    std::vector<float> f;
    f.reserve(rows.size() * width);
    for (const auto& r : rows) {
      std::vector<float> v(width, 0.0f);
      if (proj.empty()) {
        v = r;
      } else {
        for (std::size_t i = 0; i < dim; ++i) {
          if (r[i] == 0.0f) continue;
          const float* p = &proj[i * width];
          for (std::size_t j = 0; j < width; ++j) v[j] += r[i] * p[j];
        }
      }
      normalise(v);
      f.insert(f.end(), v.begin(), v.end());
    }
    return Tensor({rows.size(), width}, std::move(f));
  };
  std::vector<std::vector<float>> srows;
  std::vector<std::int32_t> labels;
  for (const auto& s : shadow) {
    srows.push_back(s.gradient);
    labels.push_back(s.label);
  }
  const Tensor train = features(srows);
  Mlp net = Mlp::make("bli.inversion", width, 64, static_cast<std::size_t>(num_classes), rng.split("init"));
  Adam opt(net.parameters(), lr);
  for (int e = 0; e < epochs; ++e) {
    ops::cross_entropy(net.forward(train), labels).backward();
    opt.step();
  }
  const Tensor logits = net.forward(features(observed));
  LabelResult out;
  auto d = logits.data();
  const auto C = static_cast<std::size_t>(num_classes);
  for (std::size_t r = 0; r < observed.size(); ++r) {
    out.predicted.push_back(
        static_cast<std::int32_t>(std::max_element(d.begin() + r * C, d.begin() + (r + 1) * C) - (d.begin() + r * C)));
  }
  return out;
}

LabelResult ns(const std::vector<double>& norms) {
  LabelResult out;
  out.predicted.assign(norms.size(), 0);
  if (norms.empty()) throw AttackError("ns: no gradient norms");
  const auto [lo_it, hi_it] = std::minmax_element(norms.begin(), norms.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    out.degenerate = true;
    return out;
  }
  // Lloyd iterations in one dimension from the extremes.
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    double s0 = 0, s1 = 0;
    std::size_t n0 = 0, n1 = 0;
    for (double v : norms) {
      if (v > mid) {
        s1 += v;
        ++n1;
      } else {
        s0 += v;
        ++n0;
      }
    }
    const double nlo = s0 / static_cast<double>(n0), nhi = s1 / static_cast<double>(n1);
    if (nlo == lo && nhi == hi) break;
    lo = nlo;
    hi = nhi;
  }
  const double threshold = 0.5 * (lo + hi);
  for (std::size_t i = 0; i < norms.size(); ++i) out.predicted[i] = norms[i] > threshold ? 1 : 0;
  return out;
}

}  // namespace splitbench
