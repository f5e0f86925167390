// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte packing shared by the wire codec and checkpoints.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace splitbench {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void f32_array(std::span<const float> v);

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

/// Bounds-checked reader; overruns throw FrameError tagged with `what`.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  void raw(void* p, std::size_t n);
  std::string_view take(std::size_t n);
  void f32_array(std::span<float> out);

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t get(int n);
  void need(std::size_t n) const;

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace splitbench
