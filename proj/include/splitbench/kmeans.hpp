// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "splitbench/rng.hpp"

namespace splitbench {

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;       // k x dim
  std::vector<std::size_t> assignment;  // per point
};

/// Lloyd's algorithm with k-means++ seeding over n x dim row-major points.
KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, Rng& rng,
                    int max_iters = 50);

/// Index of the centroid closest to `x` (ties: lowest index).
std::size_t nearest_centroid(const KMeansResult& km, const double* x);

}  // namespace splitbench
