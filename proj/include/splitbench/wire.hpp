// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

// Frame layout (little-endian):
//   "SLLM" | u8 version | u8 msg_type | u64 seq_no | u64 step | u8 ndims |
//   u32 dims[ndims] | u64 payload_len | payload
// Tensor payloads are f32 arrays; Control payloads are a u8 kind + body.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "splitbench/tensor.hpp"

namespace splitbench {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFramePrefixBytes = 4 + 1 + 1 + 8 + 8 + 1;

enum class MsgType : std::uint8_t {
  ForwardH1 = 1,
  ForwardH2 = 2,
  ForwardPred = 3,
  GradG1 = 4,
  GradG2 = 5,
  Control = 6,
};

std::string to_string(MsgType t);
bool is_tensor_message(MsgType t);

enum class ControlKind : std::uint8_t {
  Hello = 1,     // u8 wire version + u64 config digest
  Ack = 2,
  Reject = 3,    // utf-8 reason
  Shutdown = 4,
  SetMode = 5,   // u8: 1 = training, 0 = inference
};

struct ProtocolMessage {
  MsgType type = MsgType::Control;
  std::uint64_t seq_no = 0;
  std::uint64_t step = 0;
  Shape shape;
  std::vector<float> payload;  // tensor messages
  std::string control;         // control messages: kind byte + body

  static ProtocolMessage tensor(MsgType type, std::uint64_t step, const Tensor& t);
  static ProtocolMessage make_control(ControlKind kind, std::uint64_t step, std::string body = {});

  ControlKind control_kind() const;
  std::string_view control_body() const;
  Tensor to_tensor(bool requires_grad = false) const;
  std::size_t payload_bytes() const;

  bool operator==(const ProtocolMessage&) const = default;
};

std::size_t frame_length(const ProtocolMessage& m);
std::string encode(const ProtocolMessage& m);
/// Decodes exactly one frame; trailing bytes are an error.
ProtocolMessage decode(std::string_view frame);

/// Back-to-back frames, as stored in transcript archives.
std::string encode_stream(const std::vector<ProtocolMessage>& messages);
/// Splits a frame stream; a truncated trailing frame is an error.
std::vector<ProtocolMessage> decode_stream(std::string_view bytes);

/// Bytes still needed after the fixed prefix (dims + payload_len), given ndims.
inline std::size_t frame_dims_bytes(std::uint8_t ndims) { return 4u * ndims + 8u; }

}  // namespace splitbench
