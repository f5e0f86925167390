// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "splitbench/errors.hpp"

namespace splitbench::ops {
namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using BackwardFn = std::function<void(detail::Node&)>;

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input in tensor of shape " +
                         shape_str(t.shape()));
    }
  }
}

Tensor make_result(Shape shape, std::vector<float> data, const char* op,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data));
  bool needs_grad = false;
  for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  if (needs_grad) {
    const NodePtr& n = out.node();
    n->requires_grad = true;
    n->op = op;
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
    n->backward_fn = std::move(fn);
  }
  return out;
}

// Accumulation target for a parent, or nullptr when it does not need grad.
float* grad_of(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

std::size_t check_suffix(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(sb) +
                     " does not broadcast onto " + shape_str(sa));
  }
  return b.numel();
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": rank-0 tensor");
  return t.shape().back();
}

// c[M, N] += a[M, K] * b[K, N]. Each output sums over k in increasing order;
// rows are processed four at a time so every b row is loaded once per block.
void gemm_acc(std::size_t M, std::size_t K, std::size_t N, const float* __restrict a,
              const float* __restrict b, float* __restrict c) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    float* c0 = c + i * N;
    float* c1 = c0 + N;
    float* c2 = c1 + N;
    float* c3 = c2 + N;
    const float* a0 = a + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const float v0 = a0[k], v1 = a0[K + k], v2 = a0[2 * K + k], v3 = a0[3 * K + k];
      const float* bk = b + k * N;
      for (std::size_t j = 0; j < N; ++j) {
        const float bv = bk[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < M; ++i) {
    float* ci = c + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const float v = a[i * K + k];
      const float* bk = b + k * N;
      for (std::size_t j = 0; j < N; ++j) ci[j] += v * bk[j];
    }
  }
}

std::vector<float> transposed(const float* x, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const std::size_t K = b.dim(0), N = b.dim(1), M = a.numel() / K;
  Shape shape = a.shape();
  shape.back() = N;
  std::vector<float> out(M * N, 0.0f);
  gemm_acc(M, K, N, a.data().data(), b.data().data(), out.data());
  NodePtr an = a.node(), bn = b.node();
  return make_result(std::move(shape), std::move(out), "matmul", {&a, &b},
                     [an, bn, M, K, N](detail::Node& self) {
                       const float* g = self.grad.data();
                       if (float* ga = grad_of(an)) {
                         const std::vector<float> bt = transposed(bn->data.data(), K, N);
                         gemm_acc(M, N, K, g, bt.data(), ga);
                       }
                       if (float* gb = grad_of(bn)) {
                         const std::vector<float> at = transposed(an->data.data(), M, K);
                         gemm_acc(K, M, N, at.data(), g, gb);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t inner = check_suffix(a, b, "add");
  check_finite(a, "add");
  check_finite(b, "add");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % inner];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), "add", {&a, &b},
                     [an, bn, inner](detail::Node& self) {
                       const auto& g = self.grad;
                       if (float* ga = grad_of(an)) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (float* gb = grad_of(bn)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t inner = check_suffix(a, b, "sub");
  check_finite(a, "sub");
  check_finite(b, "sub");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i % inner];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), "sub", {&a, &b},
                     [an, bn, inner](detail::Node& self) {
                       const auto& g = self.grad;
                       if (float* ga = grad_of(an)) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (float* gb = grad_of(bn)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] -= g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t inner = check_suffix(a, b, "mul");
  check_finite(a, "mul");
  check_finite(b, "mul");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % inner];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), "mul", {&a, &b},
                     [an, bn, inner](detail::Node& self) {
                       const auto& g = self.grad;
                       if (float* ga = grad_of(an)) {
                         const auto& bd = bn->data;
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i % inner];
                       }
                       if (float* gb = grad_of(bn)) {
                         const auto& ad = an->data;
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * ad[i];
                       }
                     });
}

Tensor scale(const Tensor& a, float s) {
  check_finite(a, "scale");
  std::vector<float> out(a.data().begin(), a.data().end());
  for (float& v : out) v *= s;
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(out), "scale", {&a}, [an, s](detail::Node& self) {
    if (float* ga = grad_of(an)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
    }
  });
}

Tensor exp(const Tensor& a) {
  check_finite(a, "exp");
  std::vector<float> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(out), "exp", {&a}, [an](detail::Node& self) {
    if (float* ga = grad_of(an)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * self.data[i];
    }
  });
}

Tensor gelu(const Tensor& a) {
  check_finite(a, "gelu");
  constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float k = 0.044715f;
  std::vector<float> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float x = ad[i];
    out[i] = 0.5f * x * (1.0f + std::tanh(c * (x + k * x * x * x)));
  }
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(out), "gelu", {&a}, [an](detail::Node& self) {
    if (float* ga = grad_of(an)) {
      const auto& xd = an->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const float x = xd[i];
        const float t = std::tanh(c * (x + k * x * x * x));
        const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * c * (1.0f + 3.0f * k * x * x);
        ga[i] += self.grad[i] * d;
      }
    }
  });
}

Tensor softmax(const Tensor& a) {
  check_finite(a, "softmax");
  const std::size_t C = last_dim(a, "softmax");
  const std::size_t rows = a.numel() / C;
  std::vector<float> out(a.numel());
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = ad.data() + r * C;
    float* y = out.data() + r * C;
    const float m = *std::max_element(x, x + C);
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += std::exp(static_cast<double>(x[j] - m));
    for (std::size_t j = 0; j < C; ++j) {
      y[j] = static_cast<float>(std::exp(static_cast<double>(x[j] - m)) / s);
    }
  }
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(out), "softmax", {&a},
                     [an, rows, C](detail::Node& self) {
                       if (float* ga = grad_of(an)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           const float* y = self.data.data() + r * C;
                           const float* g = self.grad.data() + r * C;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < C; ++j) dot += static_cast<double>(g[j]) * y[j];
                           for (std::size_t j = 0; j < C; ++j) {
                             ga[r * C + j] += y[j] * (g[j] - static_cast<float>(dot));
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t D = last_dim(x, "layer_norm");
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
  }
  check_finite(x, "layer_norm");
  check_finite(gamma, "layer_norm");
  check_finite(beta, "layer_norm");
  const std::size_t rows = x.numel() / D;
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> rstd(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * D;
    double mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<float>(rs);
    for (std::size_t j = 0; j < D; ++j) {
      const float h = static_cast<float>((xr[j] - mu) * rs);
      xhat[r * D + j] = h;
      out[r * D + j] = h * gd[j] + bd[j];
    }
  }
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result(
      x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
      [xn, gn, bn, rows, D, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        const float* g = self.grad.data();
        if (float* gg = grad_of(gn)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < D; ++j) gg[j] += g[r * D + j] * xhat[r * D + j];
        }
        if (float* gb = grad_of(bn)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < D; ++j) gb[j] += g[r * D + j];
        }
        if (float* gx = grad_of(xn)) {
          const float* gamma_d = gn->data.data();
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
              const double gh = static_cast<double>(g[r * D + j]) * gamma_d[j];
              m1 += gh;
              m2 += gh * xhat[r * D + j];
            }
            m1 /= static_cast<double>(D);
            m2 /= static_cast<double>(D);
            for (std::size_t j = 0; j < D; ++j) {
              const double gh = static_cast<double>(g[r * D + j]) * gamma_d[j];
              gx[r * D + j] += static_cast<float>(rstd[r] * (gh - m1 - xhat[r * D + j] * m2));
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  }
  if (numel_of(ids_shape) != ids.size()) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids for shape " +
                     shape_str(ids_shape));
  }
  check_finite(table, "embedding");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<float> out(ids.size() * D);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw Error("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                  std::to_string(V));
    }
    std::copy_n(td.data() + ids[i] * D, D, out.data() + i * D);
  }
  Shape shape = ids_shape;
  shape.push_back(D);
  NodePtr tn = table.node();
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result(std::move(shape), std::move(out), "embedding", {&table},
                     [tn, D, idv = std::move(idv)](detail::Node& self) {
                       if (float* gt = grad_of(tn)) {
                         for (std::size_t i = 0; i < idv.size(); ++i) {
                           float* row = gt + static_cast<std::size_t>(idv[i]) * D;
                           const float* g = self.grad.data() + i * D;
                           for (std::size_t j = 0; j < D; ++j) row[j] += g[j];
                         }
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 bool causal) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v must share a [B,S,D] shape, got " + shape_str(q.shape()) +
                     ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t B = q.dim(0), S = q.dim(1), D = q.dim(2);
  if (n_heads == 0 || D % n_heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(D) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  check_finite(q, "attention");
  check_finite(k, "attention");
  check_finite(v, "attention");
  const std::size_t H = n_heads, dh = D / H;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> probs(B * H * S * S);
  std::vector<float> out(B * S * D, 0.0f);
  const float* qd = q.data().data();
  const float* kd = k.data().data();
  const float* vd = v.data().data();
  std::vector<float> row(S);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const float* qi = qd + (b * S + i) * D + h * dh;
        for (std::size_t j = 0; j < S; ++j) {
          const float* kj = kd + (b * S + j) * D + h * dh;
          float s = 0.0f;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          s *= sc;
          if (causal && j > i) s += -1e9f;
          row[j] = s;
        }
        const float m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t j = 0; j < S; ++j) z += std::exp(static_cast<double>(row[j] - m));
        float* p = probs.data() + ((b * H + h) * S + i) * S;
        for (std::size_t j = 0; j < S; ++j) {
          p[j] = static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / z);
        }
        float* oi = out.data() + (b * S + i) * D + h * dh;
        for (std::size_t j = 0; j < S; ++j) {
          const float* vj = vd + (b * S + j) * D + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += p[j] * vj[d];
        }
      }
    }
  }
  NodePtr qn = q.node(), kn = k.node(), vn = v.node();
  return make_result(
      q.shape(), std::move(out), "attention", {&q, &k, &v},
      [qn, kn, vn, B, S, D, H, dh, sc, probs = std::move(probs)](detail::Node& self) {
        float* gq = grad_of(qn);
        float* gk = grad_of(kn);
        float* gv = grad_of(vn);
        const float* g = self.grad.data();
        const float* qd = qn->data.data();
        const float* kd = kn->data.data();
        const float* vd = vn->data.data();
        std::vector<float> gp(S);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < S; ++i) {
              const float* p = probs.data() + ((b * H + h) * S + i) * S;
              const float* gi = g + (b * S + i) * D + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < S; ++j) {
                const float* vj = vd + (b * S + j) * D + h * dh;
                float acc = 0.0f;
                for (std::size_t d = 0; d < dh; ++d) acc += gi[d] * vj[d];
                gp[j] = acc;
                dot += static_cast<double>(p[j]) * acc;
                if (gv) {
                  float* gvj = gv + (b * S + j) * D + h * dh;
                  for (std::size_t d = 0; d < dh; ++d) gvj[d] += p[j] * gi[d];
                }
              }
              const float* qi = qd + (b * S + i) * D + h * dh;
              float* gqi = gq ? gq + (b * S + i) * D + h * dh : nullptr;
              for (std::size_t j = 0; j < S; ++j) {
                const float gs = p[j] * (gp[j] - static_cast<float>(dot)) * sc;
                if (gs == 0.0f) continue;
                const float* kj = kd + (b * S + j) * D + h * dh;
                if (gqi) {
                  for (std::size_t d = 0; d < dh; ++d) gqi[d] += gs * kj[d];
                }
                if (gk) {
                  float* gkj = gk + (b * S + j) * D + h * dh;
                  for (std::size_t d = 0; d < dh; ++d) gkj[d] += gs * qi[d];
                }
              }
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
  if (p < 0.0f || p >= 1.0f) throw Error("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0f) return x;
  check_finite(x, "dropout");
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  for (float& m : mask) m = rng.uniform() < p ? 0.0f : keep_scale;
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  NodePtr xn = x.node();
  return make_result(x.shape(), std::move(out), "dropout", {&x},
                     [xn, mask = std::move(mask)](detail::Node& self) {
                       if (float* gx = grad_of(xn)) {
                         for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
                       }
                     });
}

Tensor select_position(const Tensor& x, std::size_t pos) {
  if (x.rank() != 3 || pos >= x.dim(1)) {
    throw ShapeError("select_position: position " + std::to_string(pos) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
  std::vector<float> out(B * D);
  auto xd = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(xd.data() + (b * S + pos) * D, D, out.data() + b * D);
  }
  NodePtr xn = x.node();
  return make_result({B, D}, std::move(out), "select_position", {&x},
                     [xn, B, S, D, pos](detail::Node& self) {
                       if (float* gx = grad_of(xn)) {
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t j = 0; j < D; ++j)
                             gx[(b * S + pos) * D + j] += self.grad[b * D + j];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  NodePtr xn = x.node();
  return make_result(std::move(shape), std::move(out), "reshape", {&x}, [xn](detail::Node& self) {
    if (float* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  check_finite(x, "sum");
  double s = 0.0;
  for (float v : x.data()) s += v;
  NodePtr xn = x.node();
  return make_result({1}, {static_cast<float>(s)}, "sum", {&x}, [xn](detail::Node& self) {
    if (float* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  check_finite(x, "mean");
  double s = 0.0;
  for (float v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  NodePtr xn = x.node();
  return make_result({1}, {static_cast<float>(s / n)}, "mean", {&x}, [xn, n](detail::Node& self) {
    if (float* gx = grad_of(xn)) {
      const float g = static_cast<float>(self.grad[0] / n);
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g;
    }
  });
}

Tensor sum_squares(const Tensor& x) {
  check_finite(x, "sum_squares");
  double s = 0.0;
  for (float v : x.data()) s += static_cast<double>(v) * v;
  NodePtr xn = x.node();
  return make_result({1}, {static_cast<float>(s)}, "sum_squares", {&x}, [xn](detail::Node& self) {
    if (float* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += 2.0f * xn->data[i] * self.grad[0];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index) {
  const std::size_t C = last_dim(logits, "cross_entropy");
  const std::size_t rows = logits.numel() / C;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  check_finite(logits, "cross_entropy");
  auto ld = logits.data();
  std::vector<float> probs(logits.numel());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = ld.data() + r * C;
    const double m = *std::max_element(x, x + C);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(x[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < C; ++j) probs[r * C + j] = static_cast<float>(std::exp(x[j] - lse));
    const std::int32_t t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= C) {
      throw Error("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(C) +
                  " classes");
    }
    total += lse - x[t];
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every target is ignored");
  NodePtr ln = logits.node();
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return make_result(
      {1}, {static_cast<float>(total / static_cast<double>(count))}, "cross_entropy", {&logits},
      [ln, rows, C, count, ignore_index, tv = std::move(tv), probs = std::move(probs)](
          detail::Node& self) {
        if (float* gl = grad_of(ln)) {
          const float g = static_cast<float>(self.grad[0] / static_cast<double>(count));
          for (std::size_t r = 0; r < rows; ++r) {
            if (tv[r] == ignore_index) continue;
            for (std::size_t j = 0; j < C; ++j) {
              float d = probs[r * C + j];
              if (static_cast<std::int32_t>(j) == tv[r]) d -= 1.0f;
              gl[r * C + j] += g * d;
            }
          }
        }
      });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse_loss: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  check_finite(a, "mse_loss");
  check_finite(b, "mse_loss");
  auto ad = a.data();
  auto bd = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = static_cast<double>(ad[i]) - bd[i];
    s += d * d;
  }
  const double n = static_cast<double>(a.numel());
  NodePtr an = a.node(), bn = b.node();
  return make_result({1}, {static_cast<float>(s / n)}, "mse_loss", {&a, &b},
                     [an, bn, n](detail::Node& self) {
                       const float g = static_cast<float>(2.0 * self.grad[0] / n);
                       float* ga = grad_of(an);
                       float* gb = grad_of(bn);
                       for (std::size_t i = 0; i < an->data.size(); ++i) {
                         const float d = an->data[i] - bn->data[i];
                         if (ga) ga[i] += g * d;
                         if (gb) gb[i] -= g * d;
                       }
                     });
}

Tensor l1_norm(const Tensor& x) {
  check_finite(x, "l1_norm");
  double s = 0.0;
  for (float v : x.data()) s += std::abs(static_cast<double>(v));
  NodePtr xn = x.node();
  return make_result({1}, {static_cast<float>(s)}, "l1_norm", {&x}, [xn](detail::Node& self) {
    if (float* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        const float v = xn->data[i];
        gx[i] += self.grad[0] * static_cast<float>((v > 0) - (v < 0));
      }
    }
  });
}

Tensor l2_norm(const Tensor& x) {
  check_finite(x, "l2_norm");
  double s = 0.0;
  for (float v : x.data()) s += static_cast<double>(v) * v;
  const double norm = std::sqrt(s);
  NodePtr xn = x.node();
  return make_result({1}, {static_cast<float>(norm)}, "l2_norm", {&x},
                     [xn, norm](detail::Node& self) {
                       if (norm == 0.0) return;
                       if (float* gx = grad_of(xn)) {
                         for (std::size_t i = 0; i < xn->data.size(); ++i) {
                           gx[i] += static_cast<float>(self.grad[0] * xn->data[i] / norm);
                         }
                       }
                     });
}

Tensor kl_std_normal(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("kl_std_normal: shape mismatch " + shape_str(mu.shape()) + " vs " +
                     shape_str(logvar.shape()));
  }
  check_finite(mu, "kl_std_normal");
  check_finite(logvar, "kl_std_normal");
  const std::size_t D = last_dim(mu, "kl_std_normal");
  const double rows = static_cast<double>(mu.numel() / D);
  auto md = mu.data();
  auto vd = logvar.data();
  double s = 0.0;
  for (std::size_t i = 0; i < md.size(); ++i) {
    const double m = md[i], lv = vd[i];
    s += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  NodePtr mn = mu.node(), vn = logvar.node();
  return make_result({1}, {static_cast<float>(s / rows)}, "kl_std_normal", {&mu, &logvar},
                     [mn, vn, rows](detail::Node& self) {
                       const double g = self.grad[0] / rows;
                       float* gm = grad_of(mn);
                       float* gv = grad_of(vn);
                       for (std::size_t i = 0; i < mn->data.size(); ++i) {
                         if (gm) gm[i] += static_cast<float>(g * mn->data[i]);
                         if (gv) gv[i] += static_cast<float>(g * 0.5 * (std::exp(vn->data[i]) - 1.0));
                       }
                     });
}

}  // namespace splitbench::ops
