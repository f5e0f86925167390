// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "splitbench/errors.hpp"
#include "splitbench/kmeans.hpp"
#include "splitbench/nn.hpp"
#include "splitbench/ops.hpp"
#include "splitbench/optim.hpp"
#include "splitbench/protocol.hpp"

namespace splitbench {

namespace {

struct KindName {
  DefenseKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {DefenseKind::DP, "DP"},           {DefenseKind::SP, "SP"},           {DefenseKind::SanText, "SanText"},
    {DefenseKind::CusText, "CusText"}, {DefenseKind::RanText, "RanText"}, {DefenseKind::SnD, "SnD"},
    {DefenseKind::AT, "AT"},           {DefenseKind::MID, "MID"},         {DefenseKind::TO, "TO"},
};

}  // namespace

std::string to_string(DefenseKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

DefenseKind parse_defense_kind(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ConfigError("defense.kind: unknown value '" + s + "'");
}

std::string to_string(DefensePosition p) {
  switch (p) {
    case DefensePosition::Head: return "head";
    case DefensePosition::Tail: return "tail";
    case DefensePosition::Both: return "both";
  }
  return "?";
}

DefensePosition parse_defense_position(const std::string& s) {
  if (s == "head") return DefensePosition::Head;
  if (s == "tail") return DefensePosition::Tail;
  if (s == "both") return DefensePosition::Both;
  throw ConfigError("defense.position: unknown value '" + s + "'");
}

std::string to_string(Phase p) { return p == Phase::Inference ? "inference" : "training"; }

Phase parse_phase(const std::string& s) {
  if (s == "inference") return Phase::Inference;
  if (s == "training") return Phase::Training;
  throw ConfigError("phase: unknown value '" + s + "'");
}

std::string to_string(Slot s) { return s == Slot::Head ? "head" : "tail"; }

bool head_only(DefenseKind k) {
  return k == DefenseKind::SanText || k == DefenseKind::CusText || k == DefenseKind::RanText ||
         k == DefenseKind::SnD || k == DefenseKind::TO;
}

bool learning_based(DefenseKind k) {
  return k == DefenseKind::AT || k == DefenseKind::MID || k == DefenseKind::TO;
}

std::vector<double> strength_grid(DefenseKind k) {
  switch (k) {
    case DefenseKind::DP: return {500, 100, 70, 50};
    case DefenseKind::SP: return {95, 96, 97, 98};
    case DefenseKind::SanText:
    case DefenseKind::CusText: return {5, 1, 0.1, 0.01};
    case DefenseKind::RanText: return {30, 25, 20, 15, 10};
    case DefenseKind::SnD: return {1e5, 1e4, 1e3, 100, 10};
    case DefenseKind::AT: return {5, 1, 0.1, 0.01, 0.001};
    case DefenseKind::MID: return {1e-5, 1e-4, 1e-3, 0.01, 0.1, 0.5};
    case DefenseKind::TO: return {250, 200, 150, 100, 50};
  }
  return {};
}

std::string strength_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::DP:
    case DefenseKind::SanText:
    case DefenseKind::CusText:
    case DefenseKind::RanText: return "epsilon";
    case DefenseKind::SP: return "r";
    case DefenseKind::SnD: return "eta";
    case DefenseKind::AT:
    case DefenseKind::MID: return "lambda";
    case DefenseKind::TO: return "n_cluster";
  }
  return "strength";
}

void DefenseSpec::validate() const {
  const std::string who = "defense " + to_string(kind) + ": ";
  if (head_only(kind) && position != DefensePosition::Head) {
    throw ConfigError(who + "can only be mounted at the model head");
  }
  if (!std::isfinite(strength) && !(kind == DefenseKind::DP && strength > 0)) {
    throw ConfigError(who + strength_name(kind) + " must be finite");
  }
  switch (kind) {
    case DefenseKind::DP:
      if (strength <= 0) throw ConfigError(who + "epsilon must be > 0");
      if (extra("clip", 1.0) <= 0) throw ConfigError(who + "clip must be > 0");
      break;
    case DefenseKind::SP:
      if (strength < 0 || strength >= 100) throw ConfigError(who + "r must lie in [0, 100)");
      break;
    case DefenseKind::SanText:
    case DefenseKind::CusText:
    case DefenseKind::RanText:
      if (strength <= 0) throw ConfigError(who + "epsilon must be > 0");
      break;
    case DefenseKind::SnD:
      if (strength <= 0) throw ConfigError(who + "eta must be > 0");
      if (phase != Phase::Inference) throw ConfigError(who + "is an inference-time defense");
      break;
    case DefenseKind::AT:
    case DefenseKind::MID:
      if (strength < 0) throw ConfigError(who + "lambda must be >= 0");
      break;
    case DefenseKind::TO:
      if (strength < 2) throw ConfigError(who + "n_cluster must be >= 2");
      break;
  }
}

nlohmann::json DefenseSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"position", to_string(position)},
          {"phase", to_string(phase)},
          {"strength", strength},
          {"extras", extras}};
}

DefenseSpec DefenseSpec::from_json(const nlohmann::json& j) {
  DefenseSpec s;
  s.kind = parse_defense_kind(j.at("kind").get<std::string>());
  s.position = parse_defense_position(j.value("position", std::string("head")));
  s.phase = parse_phase(j.value("phase", std::string("training")));
  s.strength = j.at("strength").get<double>();
  s.extras = j.value("extras", nlohmann::json::object());
  return s;
}

// ---------------------------------------------------------------------------
// Primitives

Tensor dp_perturb(const Tensor& t, double epsilon, double clip, Rng& rng) {
  if (!(epsilon > 0)) throw ConfigError("dp: epsilon must be > 0");
  if (!(clip > 0)) throw ConfigError("dp: clip must be > 0");
  const std::size_t D = t.shape().back();
  const std::size_t rows = t.numel() / D;
  auto x = t.data();
  std::vector<float> factor(t.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double l1 = 0.0;
    for (std::size_t j = 0; j < D; ++j) l1 += std::abs(static_cast<double>(x[r * D + j]));
    const float f = l1 > clip ? static_cast<float>(clip / l1) : 1.0f;
    std::fill_n(factor.begin() + static_cast<std::ptrdiff_t>(r * D), D, f);
  }
  Tensor clipped = ops::mul(t, Tensor(t.shape(), std::move(factor)));
  if (std::isinf(epsilon)) return clipped;
  const double b = 2.0 * clip / epsilon;
  std::vector<float> noise(t.numel());
  for (float& v : noise) v = static_cast<float>(rng.laplace(b));
  return ops::add(clipped, Tensor(t.shape(), std::move(noise)));
}

Tensor sp_sparsify(const Tensor& t, double rate_percent) {
  if (rate_percent < 0 || rate_percent >= 100) throw ConfigError("sp: r must lie in [0, 100)");
  const std::size_t n = t.numel();
  const auto drop = static_cast<std::size_t>(std::floor(rate_percent / 100.0 * static_cast<double>(n) + 1e-9));
  if (drop == 0) return t;
  auto x = t.data();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(drop - 1), idx.end(),
                   [&](std::size_t a, std::size_t b) {
                     const float fa = std::abs(x[a]), fb = std::abs(x[b]);
                     return fa < fb || (fa == fb && a < b);
                   });
  std::vector<float> mask(n, 1.0f);
  for (std::size_t i = 0; i < drop; ++i) mask[idx[i]] = 0.0f;
  return ops::mul(t, Tensor(t.shape(), std::move(mask)));
}

namespace {

std::size_t rows_of(const Tensor& t) { return t.numel() / t.shape().back(); }

// Constant tensor filled by `f(i)`.
template <class F>
Tensor constant_like(const Tensor& t, F f) {
  std::vector<float> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(i);
  return Tensor(t.shape(), std::move(v));
}

// ---------------------------------------------------------------------------

class DpDefense final : public Defense {
 public:
  using Defense::Defense;
  Tensor on_head_output(const Tensor& h, const HookContext&, Rng& rng) override {
    return dp_perturb(h, spec().strength, spec().extra("clip", 1.0), rng);
  }
  Tensor on_boundary_gradient(const Tensor& g, const HookContext&, Rng& rng) override {
    return dp_perturb(g, spec().strength, spec().extra("clip", 1.0), rng).detach();
  }
};

class SpDefense final : public Defense {
 public:
  using Defense::Defense;
  Tensor on_head_output(const Tensor& h, const HookContext&, Rng&) override {
    return sp_sparsify(h, spec().strength);
  }
  Tensor on_boundary_gradient(const Tensor& g, const HookContext&, Rng&) override {
    return sp_sparsify(g, spec().strength).detach();
  }
};

// Token replacement by the exponential mechanism over embedding distance.
class MldpDefense final : public Defense {
 public:
  MldpDefense(DefenseSpec spec, Slot slot, const DefenseEnv& env) : Defense(std::move(spec), slot) {
    const Tensor& table = env.embedding_table;
    if (!table.defined() || table.rank() != 2) throw ConfigError("mldp: embedding table required");
    V_ = table.dim(0);
    const std::size_t D = table.dim(1);
    auto e = table.data();
    dist_.assign(V_ * V_, 0.0);
    double dmax = 0.0;
    for (std::size_t a = 0; a < V_; ++a) {
      for (std::size_t b = a + 1; b < V_; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
          const double d = static_cast<double>(e[a * D + j]) - e[b * D + j];
          s += d * d;
        }
        dist_[a * V_ + b] = dist_[b * V_ + a] = std::sqrt(s);
        dmax = std::max(dmax, std::sqrt(s));
      }
    }
    if (dmax > 0) {
      for (double& d : dist_) d /= dmax;
    }
    special_.assign(V_, false);
    for (auto id : env.special_tokens) {
      if (id >= 0 && static_cast<std::size_t>(id) < V_) special_[static_cast<std::size_t>(id)] = true;
    }
    std::vector<std::int32_t> ordinary;
    for (std::size_t v = 0; v < V_; ++v)
      if (!special_[v]) ordinary.push_back(static_cast<std::int32_t>(v));

    candidates_.assign(V_, {});
    const DefenseKind kind = this->spec().kind;
    if (kind == DefenseKind::SanText) {
      // Sensitive set: the least frequent fraction of the ordinary vocabulary.
      const double p_sens = this->spec().extra("p_sens", 0.5);
      std::vector<std::int32_t> by_freq = ordinary;
      auto count = [&](std::int32_t v) {
        return static_cast<std::size_t>(v) < env.token_counts.size()
                   ? env.token_counts[static_cast<std::size_t>(v)]
                   : 0;
      };
      std::stable_sort(by_freq.begin(), by_freq.end(),
                       [&](std::int32_t a, std::int32_t b) { return count(a) < count(b); });
      by_freq.resize(static_cast<std::size_t>(std::floor(p_sens * static_cast<double>(by_freq.size()))));
      const int k = this->spec().extra("k", 64);
      for (auto u : by_freq) candidates_[static_cast<std::size_t>(u)] = nearest(u, by_freq, k);
    } else if (kind == DefenseKind::CusText) {
      const int k = this->spec().extra("k", 16);
      for (auto u : ordinary) candidates_[static_cast<std::size_t>(u)] = nearest(u, ordinary, k);
    }
    ordinary_ = std::move(ordinary);
  }

  TokenBatch on_tokens(const TokenBatch& x, const HookContext&, Rng& rng) override {
    TokenBatch out = x;
    const double eps = spec().strength;
    const bool random_lists = spec().kind == DefenseKind::RanText;
    const int k_ran = spec().extra("k", 32);
    for (auto& id : out.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= V_) {
        throw ConfigError("mldp: token id " + std::to_string(id) + " outside the vocabulary");
      }
      const auto u = static_cast<std::size_t>(id);
      if (special_[u]) continue;
      if (random_lists) {
        std::vector<std::int32_t> list{id};
        const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k_ran), ordinary_.size());
        while (list.size() < want) {
          auto v = ordinary_[rng.uniform_int(ordinary_.size())];
          if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
        }
        id = sample(u, list, eps, rng);
      } else if (!candidates_[u].empty()) {
        id = sample(u, candidates_[u], eps, rng);
      }
    }
    return out;
  }

 private:
  std::vector<std::int32_t> nearest(std::int32_t u, const std::vector<std::int32_t>& pool, int k) const {
    std::vector<std::int32_t> c = pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), c.size());
    std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n), c.end(),
                      [&](std::int32_t a, std::int32_t b) {
                        const double da = d(u, a), db = d(u, b);
                        return da < db || (da == db && a < b);
                      });
    c.resize(n);
    return c;
  }

  double d(std::int32_t a, std::int32_t b) const {
    return dist_[static_cast<std::size_t>(a) * V_ + static_cast<std::size_t>(b)];
  }

  std::int32_t sample(std::size_t u, const std::vector<std::int32_t>& cands, double eps, Rng& rng) const {
    std::vector<double> w(cands.size());
    double total = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      w[i] = std::exp(-eps * d(static_cast<std::int32_t>(u), cands[i]) / 2.0);
      total += w[i];
    }
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      r -= w[i];
      if (r <= 0) return cands[i];
    }
    return cands.back();
  }

  std::size_t V_ = 0;
  std::vector<double> dist_;
  std::vector<bool> special_;
  std::vector<std::int32_t> ordinary_;
  std::vector<std::vector<std::int32_t>> candidates_;
};

// Trains `params` with Adam on `loss_fn` over the prepare batches; `after`
// runs once the update has been applied.
template <class LossFn, class After>
void fit(const PrepareContext& ctx, std::vector<Tensor> params, int epochs, Rng& rng, LossFn loss_fn,
         After after) {
  if (!ctx.batches || ctx.batches->empty()) throw ConfigError("defense preparation needs training batches");
  Adam opt(std::move(params), ctx.lr);
  std::uint64_t step = 0;
  for (int e = 0; e < epochs; ++e) {
    for (const Batch& b : *ctx.batches) {
      Rng r = rng.split(step);
      Tensor loss = loss_fn(b, step, r);
      loss.backward();
      opt.step();
      after(b, step, r);
      ++step;
    }
  }
}

class SndDefense final : public Defense {
 public:
  SndDefense(DefenseSpec spec, Slot slot, std::uint64_t seed) : Defense(std::move(spec), slot), seed_(seed) {}

  Tensor on_head_output(const Tensor& h, const HookContext&, Rng& rng) override {
    return privatize(h, spec().strength, rng);
  }

  Tensor on_returned(const Tensor& r, const HookContext&, Rng&) override {
    if (!denoiser_) return r;
    return denoise(r);
  }

  bool needs_prepare() const override { return true; }

  void prepare(const PrepareContext& ctx, Rng& rng) override {
    if (!ctx.head || !ctx.returned_from_head) throw ConfigError("SnD: denoiser fitting needs the pipeline");
    const double eta_train = spec().extra("eta_train", spec().strength);
    const int epochs = spec().extra("denoiser_epochs", ctx.epochs);
    const Batch& first = ctx.batches->front();
    Tensor probe = ctx.returned_from_head(ctx.head->forward(first.x, {}).detach());
    const std::size_t dim = probe.shape().back();
    denoiser_ = Mlp::make("snd.denoiser", dim, 4 * dim, dim, Rng(seed_).split("snd"), true);
    fit(ctx, denoiser_->parameters(), epochs, rng, [&](const Batch& b, std::uint64_t, Rng& r) {
      Tensor h = ctx.head->forward(b.x, {}).detach();
      Tensor clean = ctx.returned_from_head(h).detach();
      Tensor noisy = ctx.returned_from_head(privatize(h, eta_train, r)).detach();
      return ops::mse_loss(denoise(noisy), clean);
    }, [](const Batch&, std::uint64_t, Rng&) {});
  }

 private:
  Tensor privatize(const Tensor& h, double eta, Rng& rng) const {
    const double b = spec().extra("sensitivity", 10.0) / eta;
    return ops::add(h, constant_like(h, [&](std::size_t) { return static_cast<float>(rng.laplace(b)); }));
  }
  Tensor denoise(const Tensor& r) const { return ops::add(r, denoiser_->forward(r)); }

  std::uint64_t seed_;
  std::optional<Mlp> denoiser_;
};

// Runs the head-side training a learning-based inference-time defense needs
// before deployment: the pretrained pipeline is frozen and the defense is fit
// against the task loss plus its own regularizers.
void fit_head_defense(Defense& d, const PrepareContext& ctx, Rng& rng) {
  if (!ctx.head || !ctx.downstream_from_head) throw ConfigError("defense training needs the pipeline");
  fit(
      ctx, d.parameters(), ctx.epochs, rng,
      [&](const Batch& b, std::uint64_t step, Rng& r) {
        HookContext hc{step, true, &b.x, &b.targets};
        Tensor h = ctx.head->forward(b.x, {}).detach();
        Tensor z = d.on_head_output(h, hc, r);
        Tensor loss = task_loss(ctx.downstream_from_head(z), b.targets);
        for (const Tensor& reg : d.take_regularizers()) loss = ops::add(loss, reg);
        return loss;
      },
      [&](const Batch& b, std::uint64_t step, Rng& r) {
        HookContext hc{step, true, &b.x, &b.targets};
        Rng ra = r.split("after");
        d.after_update(hc, ra);
      });
}

}  // namespace

namespace {

class MidDefense final : public Defense {
 public:
  MidDefense(DefenseSpec spec, Slot slot, std::size_t dim, std::uint64_t seed)
      : Defense(std::move(spec), slot) {
    Rng rng = Rng(seed).split("mid").split(to_string(slot));
    const std::size_t hidden = 4 * dim;
    enc_ = make_dense("mid.enc", dim, hidden, rng.split("enc"));
    mu_ = make_dense("mid.mu", hidden, dim, rng.split("mu"), true);
    logvar_ = make_dense("mid.logvar", hidden, dim, rng.split("logvar"), true);
    const float init = this->spec().extra("logvar_init", -4.0f);
    for (float& v : logvar_.bias.data()) v = init;
  }

  Tensor on_head_output(const Tensor& h, const HookContext& ctx, Rng& rng) override {
    return bottleneck(h, ctx, rng);
  }
  Tensor on_returned(const Tensor& r, const HookContext& ctx, Rng& rng) override {
    return slot() == Slot::Tail ? bottleneck(r, ctx, rng) : r;
  }

  std::vector<Tensor> take_regularizers() override { return std::exchange(regs_, {}); }
  std::vector<Tensor> parameters() const override {
    return {enc_.weight, enc_.bias, mu_.weight, mu_.bias, logvar_.weight, logvar_.bias};
  }
  bool needs_prepare() const override { return spec().phase == Phase::Inference && slot() == Slot::Head; }
  void prepare(const PrepareContext& ctx, Rng& rng) override { fit_head_defense(*this, ctx, rng); }

 private:
  Tensor bottleneck(const Tensor& h, const HookContext& ctx, Rng& rng) {
    Tensor hid = ops::gelu(enc_.forward(h, {}));
    Tensor mu = ops::add(h, mu_.forward(hid, {}));
    Tensor lv = logvar_.forward(hid, {});
    Tensor sigma = ops::exp(ops::scale(lv, 0.5f));
    Tensor noise = constant_like(h, [&](std::size_t) { return static_cast<float>(rng.normal()); });
    Tensor z = ops::add(mu, ops::mul(sigma, noise));
    if (ctx.training) {
      regs_.push_back(ops::scale(ops::kl_std_normal(mu, lv), static_cast<float>(spec().strength)));
    }
    return z;
  }

  Linear enc_, mu_, logvar_;
  std::vector<Tensor> regs_;
};

// Adversarial training at the head: D maps h to what is sent, A tries to
// recover the input tokens from D(h).
class AtHeadDefense final : public Defense {
 public:
  AtHeadDefense(DefenseSpec spec, Slot slot, std::size_t dim, std::size_t vocab, std::uint64_t seed)
      : Defense(std::move(spec), slot) {
    Rng rng = Rng(seed).split("at.head");
    mapping_ = Mlp::make("at.mapping", dim, 4 * dim, dim, rng.split("D"), true);
    adversary_ = Mlp::make("at.adversary", dim, 4 * dim, vocab, rng.split("A"));
    adv_opt_ = std::make_unique<Adam>(adversary_.parameters(), this->spec().extra("adversary_lr", 1e-3f));
  }

  Tensor on_head_output(const Tensor& h, const HookContext& ctx, Rng&) override {
    Tensor d = ops::add(h, mapping_.forward(h));
    if (ctx.training && ctx.tokens) {
      const float rows = static_cast<float>(rows_of(h));
      Tensor distortion = ops::scale(ops::sum_squares(ops::sub(d, h)), static_cast<float>(spec().strength) / rows);
      Tensor adv = adversary_loss(d, *ctx.tokens);
      regs_.push_back(ops::sub(distortion, adv));
      cached_ = d.detach();
      cached_tokens_ = *ctx.tokens;
    }
    return d;
  }

  std::vector<Tensor> take_regularizers() override { return std::exchange(regs_, {}); }
  std::vector<Tensor> parameters() const override { return mapping_.parameters(); }

  void after_update(const HookContext&, Rng&) override {
    if (!cached_.defined()) return;
    for (Tensor p : adversary_.parameters()) p.zero_grad();
    adversary_loss(cached_, cached_tokens_).backward();
    adv_opt_->step();
    cached_ = Tensor();
  }

  bool needs_prepare() const override { return spec().phase == Phase::Inference; }
  void prepare(const PrepareContext& ctx, Rng& rng) override { fit_head_defense(*this, ctx, rng); }

 private:
  Tensor adversary_loss(const Tensor& d, const TokenBatch& x) const {
    const std::size_t rows = rows_of(d);
    Tensor logits = adversary_.forward(ops::reshape(d, {rows, d.shape().back()}));
    std::vector<std::int32_t> t(x.ids.begin(), x.ids.end());
    for (auto& v : t)
      if (v == kPadToken) v = kIgnoreTarget;
    return ops::cross_entropy(logits, t, kIgnoreTarget);
  }

  Mlp mapping_;
  Mlp adversary_;
  std::unique_ptr<Adam> adv_opt_;
  std::vector<Tensor> regs_;
  Tensor cached_;
  TokenBatch cached_tokens_;
};

// Adversarial training at the tail: D maps the boundary gradient, A tries to
// recover the labels from D(G). Both are trained here, on the Data Party,
// from each outgoing gradient.
class AtTailDefense final : public Defense {
 public:
  AtTailDefense(DefenseSpec spec, Slot slot, std::uint64_t seed)
      : Defense(std::move(spec), slot), rng_(Rng(seed).split("at.tail")) {}

  Tensor on_boundary_gradient(const Tensor& g, const HookContext& ctx, Rng&) override {
    if (!ctx.training || !ctx.targets) return g;
    const std::size_t batch = g.dim(0);
    const bool per_sample = ctx.targets->size() == batch;
    const std::size_t rows = per_sample ? batch : g.numel() / g.shape().back();
    const std::size_t width = g.numel() / rows;
    std::int32_t classes = 0;
    for (auto t : *ctx.targets) classes = std::max(classes, t + 1);
    if (!mapping_) {
      const std::size_t out = per_sample ? static_cast<std::size_t>(std::max(classes, 2)) : width;
      mapping_ = Mlp::make("at.tail.mapping", width, 4 * width, width, rng_.split("D"), true);
      adversary_ = Mlp::make("at.tail.adversary", width, 4 * width,
                             per_sample ? std::max<std::size_t>(out, spec().extra("num_classes", 2))
                                        : spec().extra("vocab", out),
                             rng_.split("A"));
      map_opt_ = std::make_unique<Adam>(mapping_->parameters(), spec().extra("mapping_lr", 1e-3f));
      adv_opt_ = std::make_unique<Adam>(adversary_->parameters(), spec().extra("adversary_lr", 1e-3f));
    }
    // Work in units of the gradient's RMS so the networks see O(1) inputs.
    double ss = 0.0;
    for (float v : g.data()) ss += static_cast<double>(v) * v;
    const float scale = static_cast<float>(std::sqrt(ss / static_cast<double>(g.numel())) + 1e-12);
    Tensor gn = ops::scale(ops::reshape(g.detach(), {rows, width}), 1.0f / scale);

    Tensor d = ops::add(gn, mapping_->forward(gn));
    Tensor distortion = ops::scale(ops::sum_squares(ops::sub(d, gn)),
                                   static_cast<float>(spec().strength) / static_cast<float>(rows));
    Tensor defender = ops::sub(distortion, ops::cross_entropy(adversary_->forward(d), *ctx.targets, kIgnoreTarget));
    defender.backward();
    map_opt_->step();
    for (Tensor p : adversary_->parameters()) p.zero_grad();

    Tensor sent = d.detach();
    ops::cross_entropy(adversary_->forward(sent), *ctx.targets, kIgnoreTarget).backward();
    adv_opt_->step();
    return ops::reshape(ops::scale(sent, scale), g.shape()).detach();
  }

 private:
  Rng rng_;
  std::optional<Mlp> mapping_;
  std::optional<Mlp> adversary_;
  std::unique_ptr<Adam> map_opt_;
  std::unique_ptr<Adam> adv_opt_;
};

// Word-representation obfuscation: token embeddings are pulled a random
// fraction of the way toward their cluster centroid, and a cluster loss
// tightens clusters while separating them.
class ToDefense final : public Defense {
 public:
  ToDefense(DefenseSpec spec, Slot slot, const DefenseEnv& env)
      : Defense(std::move(spec), slot), rng_(Rng(env.seed).split("to")) {
    if (!env.embedding_table.defined()) throw ConfigError("TO: embedding table required");
    refresh(env.embedding_table);
  }

  void on_epoch(const ModelSlice& head) override { refresh(head.embedding_table()); }

  Tensor on_token_embeddings(const Tensor& e, const HookContext& ctx, Rng& rng) override {
    const std::size_t D = e.shape().back();
    const std::size_t rows = rows_of(e);
    const double eps = spec().extra("epsilon_pert", 1.0);
    std::vector<float> keep(e.numel()), shift(e.numel());
    std::vector<std::size_t> own(rows);
    auto x = e.data();
    std::vector<double> row(D);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < D; ++j) row[j] = x[r * D + j];
      own[r] = nearest_centroid(km_, row.data());
      const double u = eps * rng.uniform();
      for (std::size_t j = 0; j < D; ++j) {
        keep[r * D + j] = static_cast<float>(1.0 - u);
        shift[r * D + j] = static_cast<float>(u * km_.centroids[own[r] * D + j]);
      }
    }
    Tensor out = ops::add(ops::mul(e, Tensor(e.shape(), std::move(keep))), Tensor(e.shape(), std::move(shift)));
    if (ctx.training) {
      const double w_close = spec().extra("w_close", 0.1);
      const double w_away = spec().extra("w_away", 0.5);
      if (w_close != 0.0 || w_away != 0.0) regs_.push_back(cluster_loss(out, own, w_close, w_away));
    }
    return out;
  }

  std::vector<Tensor> take_regularizers() override { return std::exchange(regs_, {}); }

  std::size_t clusters() const { return km_.k; }

 private:
  void refresh(const Tensor& table) {
    const std::size_t V = table.dim(0), D = table.dim(1);
    std::vector<double> pts(table.data().begin(), table.data().end());
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(spec().strength), V);
    Rng r = rng_.split(refreshes_++);
    km_ = kmeans(pts, D, k, r);
  }

  // Mean squared distance to the own centroid, weighted by w_close, minus the
  // mean squared distance to every other centroid, weighted by w_away.
  Tensor cluster_loss(const Tensor& e, const std::vector<std::size_t>& own, double w_close, double w_away) {
    const std::size_t D = e.shape().back(), rows = own.size(), K = km_.k;
    std::vector<float> own_c(e.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < D; ++j) own_c[r * D + j] = static_cast<float>(km_.centroids[own[r] * D + j]);
    Tensor own_sq = ops::sum_squares(ops::sub(e, Tensor(e.shape(), std::move(own_c))));
    std::vector<float> csum(D, 0.0f);
    double cnorm = 0.0;
    for (std::size_t c = 0; c < K; ++c)
      for (std::size_t j = 0; j < D; ++j) {
        const double v = km_.centroids[c * D + j];
        csum[j] += static_cast<float>(v);
        cnorm += v * v;
      }
    // sum_r sum_c |e_r - c|^2 = K sum|e|^2 - 2 sum_r e_r . csum + rows * sum_c |c|^2
    Tensor all_sq = ops::add(
        ops::sub(ops::scale(ops::sum_squares(e), static_cast<float>(K)),
                 ops::scale(ops::sum(ops::mul(e, Tensor({D}, std::move(csum)))), 2.0f)),
        Tensor::scalar(static_cast<float>(static_cast<double>(rows) * cnorm)));
    Tensor others = ops::scale(ops::sub(all_sq, own_sq), 1.0f / static_cast<float>(rows * (K - 1)));
    Tensor close = ops::scale(own_sq, 1.0f / static_cast<float>(rows));
    return ops::sub(ops::scale(close, static_cast<float>(w_close)), ops::scale(others, static_cast<float>(w_away)));
  }

  Rng rng_;
  std::uint64_t refreshes_ = 0;
  KMeansResult km_;
  std::vector<Tensor> regs_;
};

}  // namespace

std::unique_ptr<Defense> make_defense(const DefenseSpec& spec, Slot slot, const DefenseEnv& env) {
  spec.validate();
  const auto D = static_cast<std::size_t>(env.model.d_model);
  const std::uint64_t seed = Rng(env.seed).split(to_string(spec.kind)).split(to_string(slot)).next_u64();
  switch (spec.kind) {
    case DefenseKind::DP: return std::make_unique<DpDefense>(spec, slot);
    case DefenseKind::SP: return std::make_unique<SpDefense>(spec, slot);
    case DefenseKind::SanText:
    case DefenseKind::CusText:
    case DefenseKind::RanText: return std::make_unique<MldpDefense>(spec, slot, env);
    case DefenseKind::SnD: return std::make_unique<SndDefense>(spec, slot, seed);
    case DefenseKind::MID:
      if (slot == Slot::Tail && env.mode != PartitionMode::HBT) {
        throw ConfigError("defense MID: a tail bottleneck needs the HBT partition");
      }
      return std::make_unique<MidDefense>(spec, slot, D, seed);
    case DefenseKind::AT:
      if (slot == Slot::Head) {
        return std::make_unique<AtHeadDefense>(spec, slot, D, static_cast<std::size_t>(env.model.vocab_size), seed);
      }
      return std::make_unique<AtTailDefense>(spec, slot, seed);
    case DefenseKind::TO: return std::make_unique<ToDefense>(spec, slot, env);
  }
  throw ConfigError("unknown defense kind");
}

DefenseStack::DefenseStack(const std::vector<DefenseSpec>& specs, const DefenseEnv& env)
    : base_(Rng(env.seed).split("defense")) {
  for (const DefenseSpec& s : specs) {
    if (s.position != DefensePosition::Tail) defenses_.push_back(make_defense(s, Slot::Head, env));
    if (s.position != DefensePosition::Head) defenses_.push_back(make_defense(s, Slot::Tail, env));
  }
}

bool DefenseStack::has(Slot slot) const {
  return std::any_of(defenses_.begin(), defenses_.end(), [&](const auto& d) { return d->slot() == slot; });
}

Rng DefenseStack::stream(std::size_t i, const HookContext& ctx, const char* hook) const {
  return base_.split(i).split(hook).split(ctx.step).split(ctx.training ? 1 : 0);
}

TokenBatch DefenseStack::apply_tokens(const TokenBatch& x, const HookContext& ctx) {
  TokenBatch out = x;
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (d.slot() != Slot::Head || !d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "tokens");
    out = d.on_tokens(out, ctx, r);
  }
  return out;
}

Tensor DefenseStack::apply_token_embeddings(const Tensor& e, const HookContext& ctx) {
  Tensor out = e;
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (d.slot() != Slot::Head || !d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "embeddings");
    out = d.on_token_embeddings(out, ctx, r);
  }
  return out;
}

Tensor DefenseStack::apply_head_output(const Tensor& h, const HookContext& ctx) {
  Tensor out = h;
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (d.slot() != Slot::Head || !d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "head_output");
    out = d.on_head_output(out, ctx, r);
  }
  return out;
}

Tensor DefenseStack::apply_returned(const Tensor& r0, const HookContext& ctx) {
  Tensor out = r0;
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (!d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "returned");
    out = d.on_returned(out, ctx, r);
  }
  return out;
}

Tensor DefenseStack::apply_boundary_gradient(const Tensor& g, const HookContext& ctx) {
  Tensor out = g;
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (d.slot() != Slot::Tail || !d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "gradient");
    out = d.on_boundary_gradient(out, ctx, r);
  }
  return out;
}

std::vector<Tensor> DefenseStack::take_regularizers() {
  std::vector<Tensor> out;
  for (auto& d : defenses_) {
    for (Tensor& t : d->take_regularizers()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tensor> DefenseStack::parameters() const {
  std::vector<Tensor> out;
  for (const auto& d : defenses_) {
    if (d->spec().phase != Phase::Training) continue;
    for (Tensor& t : d->parameters()) out.push_back(std::move(t));
  }
  return out;
}

void DefenseStack::after_update(const HookContext& ctx) {
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    Defense& d = *defenses_[i];
    if (!d.fires(ctx.training)) continue;
    Rng r = stream(i, ctx, "after_update");
    d.after_update(ctx, r);
  }
}

void DefenseStack::on_epoch(const ModelSlice& head) {
  for (auto& d : defenses_) d->on_epoch(head);
}

void DefenseStack::prepare(const PrepareContext& ctx) {
  for (std::size_t i = 0; i < defenses_.size(); ++i) {
    if (!defenses_[i]->needs_prepare()) continue;
    Rng r = base_.split(i).split("prepare");
    defenses_[i]->prepare(ctx, r);
  }
}

}  // namespace splitbench
