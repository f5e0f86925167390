// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/rng.hpp"

#include <cmath>
#include <numbers>

namespace splitbench {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + 0x9e3779b97f4a7c15ULL)) {}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(key_ ^ mix64(fnv1a64(label) + 0x632be59bd9b4e019ULL)), 0);
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix64(key_ + mix64(index ^ 0xd6e8feb86659fd93ULL)), 0);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  std::uint64_t z = key_ + counter_ * 0x9e3779b97f4a7c15ULL;
  return mix64(z ^ (key_ >> 17));
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::laplace(double scale) {
  double u = uniform() - 0.5;
  double mag = -std::log(1.0 - 2.0 * std::abs(u));
  return u < 0 ? -scale * mag : scale * mag;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the result unbiased.
  std::uint64_t limit = ~0ULL - (~0ULL % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace splitbench
