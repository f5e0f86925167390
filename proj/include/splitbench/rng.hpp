// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace splitbench {

/// Counter-based, splittable generator.
///
/// A stream is identified by a 64-bit key; the i-th draw is a pure function of
/// (key, i). `split` derives an independent child stream from a label, so every
/// stochastic site (init, dropout, noise, sampling, attacks) can own a named
/// substream and draws at one site never shift the draws at another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  double laplace(double scale);
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, int /*raw*/) : key_(key) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace splitbench
