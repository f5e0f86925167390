// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/wire.hpp"

#include <cstring>

#include "splitbench/bytes.hpp"
#include "splitbench/errors.hpp"

namespace splitbench {

std::string to_string(MsgType t) {
  switch (t) {
    case MsgType::ForwardH1: return "ForwardH1";
    case MsgType::ForwardH2: return "ForwardH2";
    case MsgType::ForwardPred: return "ForwardPred";
    case MsgType::GradG1: return "GradG1";
    case MsgType::GradG2: return "GradG2";
    case MsgType::Control: return "Control";
  }
  return "Unknown(" + std::to_string(static_cast<int>(t)) + ")";
}

bool is_tensor_message(MsgType t) { return t != MsgType::Control; }

ProtocolMessage ProtocolMessage::tensor(MsgType type, std::uint64_t step, const Tensor& t) {
  ProtocolMessage m;
  m.type = type;
  m.step = step;
  m.shape = t.shape();
  m.payload.assign(t.data().begin(), t.data().end());
  return m;
}

ProtocolMessage ProtocolMessage::make_control(ControlKind kind, std::uint64_t step, std::string body) {
  ProtocolMessage m;
  m.type = MsgType::Control;
  m.step = step;
  m.control.push_back(static_cast<char>(kind));
  m.control += body;
  return m;
}

ControlKind ProtocolMessage::control_kind() const {
  if (type != MsgType::Control || control.empty()) throw ProtocolError("not a control message");
  return static_cast<ControlKind>(static_cast<std::uint8_t>(control[0]));
}

std::string_view ProtocolMessage::control_body() const {
  return std::string_view(control).substr(control.empty() ? 0 : 1);
}

Tensor ProtocolMessage::to_tensor(bool requires_grad) const {
  if (!is_tensor_message(type)) throw ProtocolError("control message carries no tensor");
  return Tensor(shape, payload, requires_grad);
}

std::size_t ProtocolMessage::payload_bytes() const {
  return is_tensor_message(type) ? payload.size() * sizeof(float) : control.size();
}

std::size_t frame_length(const ProtocolMessage& m) {
  return kFramePrefixBytes + frame_dims_bytes(static_cast<std::uint8_t>(m.shape.size())) +
         m.payload_bytes();
}

std::string encode(const ProtocolMessage& m) {
  if (m.shape.size() > 255) throw FrameError("encode: too many dimensions");
  if (is_tensor_message(m.type) && numel_of(m.shape) != m.payload.size()) {
    throw FrameError("encode: payload has " + std::to_string(m.payload.size()) +
                     " values for shape " + shape_str(m.shape));
  }
  ByteWriter w;
  w.raw("SLLM", 4);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u64(m.seq_no);
  w.u64(m.step);
  w.u8(static_cast<std::uint8_t>(m.shape.size()));
  for (std::size_t d : m.shape) {
    if (d > 0xffffffffu) throw FrameError("encode: dimension exceeds u32");
    w.u32(static_cast<std::uint32_t>(d));
  }
  w.u64(m.payload_bytes());
  if (is_tensor_message(m.type)) {
    w.f32_array(m.payload);
  } else {
    w.raw(m.control.data(), m.control.size());
  }
  return w.take();
}

ProtocolMessage decode(std::string_view frame) {
  ByteReader r(frame, "frame");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "SLLM", 4) != 0) throw FrameError("frame: bad magic");
  if (std::uint8_t v = r.u8(); v != kWireVersion) {
    throw FrameError("frame: unsupported version " + std::to_string(v));
  }
  const std::uint8_t type = r.u8();
  if (type < 1 || type > 6) throw FrameError("frame: unknown message type " + std::to_string(type));
  ProtocolMessage m;
  m.type = static_cast<MsgType>(type);
  m.seq_no = r.u64();
  m.step = r.u64();
  m.shape.resize(r.u8());
  for (auto& d : m.shape) d = r.u32();
  const std::uint64_t len = r.u64();
  if (len != r.remaining()) {
    throw FrameError("frame: payload_len " + std::to_string(len) + " but " +
                     std::to_string(r.remaining()) + " bytes follow");
  }
  if (is_tensor_message(m.type)) {
    if (m.shape.empty() || len != 4 * numel_of(m.shape)) {
      throw FrameError("frame: payload_len " + std::to_string(len) + " does not match shape " +
                       shape_str(m.shape));
    }
    m.payload.resize(numel_of(m.shape));
    r.f32_array(m.payload);
  } else {
    if (len == 0) throw FrameError("frame: empty control body");
    m.control = std::string(r.take(len));
  }
  return m;
}

std::string encode_stream(const std::vector<ProtocolMessage>& messages) {
  std::string out;
  for (const auto& m : messages) out += encode(m);
  return out;
}

std::vector<ProtocolMessage> decode_stream(std::string_view bytes) {
  std::vector<ProtocolMessage> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    ByteReader r(bytes.substr(pos), "frame stream");
    char prefix[kFramePrefixBytes];
    r.raw(prefix, kFramePrefixBytes);
    const auto ndims = static_cast<std::uint8_t>(prefix[kFramePrefixBytes - 1]);
    for (std::uint8_t i = 0; i < ndims; ++i) r.u32();
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw FrameError("frame stream: truncated frame at byte " + std::to_string(pos));
    const std::size_t total = r.pos() + len;
    out.push_back(decode(bytes.substr(pos, total)));
    pos += total;
  }
  return out;
}

}  // namespace splitbench
