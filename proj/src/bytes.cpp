// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/bytes.hpp"

#include <bit>
#include <cstring>

#include "splitbench/errors.hpp"

namespace splitbench {

void ByteWriter::f32_array(std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(v.data(), v.size() * sizeof(float));
  } else {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
}

void ByteReader::need(std::size_t n) const {
  if (n > remaining()) {
    throw FrameError(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                     std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
  }
}

std::uint64_t ByteReader::get(int n) {
  need(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += static_cast<std::size_t>(n);
  return v;
}

void ByteReader::raw(void* p, std::size_t n) {
  need(n);
  std::memcpy(p, data_.data() + pos_, n);
  pos_ += n;
}

std::string_view ByteReader::take(std::size_t n) {
  need(n);
  auto s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::f32_array(std::span<float> out) {
  const std::size_t n = out.size() * sizeof(float);
  need(n);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), data_.data() + pos_, n);
    pos_ += n;
  } else {
    for (float& f : out) f = std::bit_cast<float>(u32());
  }
}

}  // namespace splitbench
