// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/kmeans.hpp"

#include <limits>

#include "splitbench/errors.hpp"

namespace splitbench {
namespace {

double sqdist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace

std::size_t nearest_centroid(const KMeansResult& km, const double* x) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < km.k; ++c) {
    const double d = sqdist(x, km.centroids.data() + c * km.dim, km.dim);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, Rng& rng,
                    int max_iters) {
  if (dim == 0 || points.size() % dim != 0) throw Error("kmeans: bad point layout");
  const std::size_t n = points.size() / dim;
  if (k == 0 || k > n) throw ConfigError("kmeans: k=" + std::to_string(k) + " with " + std::to_string(n) + " points");
  KMeansResult km;
  km.k = k;
  km.dim = dim;
  km.centroids.reserve(k * dim);
  // k-means++ seeding.
  std::size_t first = static_cast<std::size_t>(rng.uniform_int(n));
  km.centroids.insert(km.centroids.end(), points.begin() + static_cast<std::ptrdiff_t>(first * dim),
                      points.begin() + static_cast<std::ptrdiff_t>((first + 1) * dim));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const double* last = km.centroids.data() + (c - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sqdist(points.data() + i * dim, last, dim));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r <= 0) break;
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(n));
    }
    km.centroids.insert(km.centroids.end(), points.begin() + static_cast<std::ptrdiff_t>(pick * dim),
                        points.begin() + static_cast<std::ptrdiff_t>((pick + 1) * dim));
  }
  km.assignment.assign(n, 0);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest_centroid(km, points.data() + i * dim);
      if (c != km.assignment[i]) {
        km.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sum(k * dim, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = km.assignment[i];
      ++count[c];
      for (std::size_t j = 0; j < dim; ++j) sum[c * dim + j] += points[i * dim + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < dim; ++j) km.centroids[c * dim + j] = sum[c * dim + j] / static_cast<double>(count[c]);
    }
  }
  return km;
}

}  // namespace splitbench
