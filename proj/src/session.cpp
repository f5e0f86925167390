// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/session.hpp"

#include <cstring>

#include "splitbench/bytes.hpp"
#include "splitbench/errors.hpp"

namespace splitbench {

Endpoint::Endpoint(Channel& channel, std::string party) : channel_(channel), party_(std::move(party)) {}

void Endpoint::send(ProtocolMessage m) {
  m.seq_no = next_seq();
  try {
    channel_.send(m);
  } catch (const ChannelClosed& e) {
    throw SessionError(party_ + ": " + e.what(), last_good_);
  }
  last_sent_ = m.seq_no;
  last_good_ = m.seq_no;
  absorb(m);
  if (frame_log_) frame_log_->push_back(m);
  if (recording_ && is_tensor_message(m.type)) transcript_.push_back(std::move(m));
}

ProtocolMessage Endpoint::recv() {
  ProtocolMessage m;
  try {
    m = channel_.recv();
  } catch (const ChannelClosed& e) {
    throw SessionError(party_ + ": " + e.what(), last_good_);
  } catch (const FrameError& e) {
    throw SessionError(party_ + ": " + e.what(), last_good_);
  }
  if (m.seq_no <= std::max(last_sent_, last_recv_)) {
    throw ProtocolError(party_ + ": seq_no " + std::to_string(m.seq_no) +
                        " does not advance past " + std::to_string(std::max(last_sent_, last_recv_)));
  }
  last_recv_ = m.seq_no;
  last_good_ = m.seq_no;
  absorb(m);
  if (frame_log_) frame_log_->push_back(m);
  if (recording_ && is_tensor_message(m.type)) transcript_.push_back(m);
  return m;
}

ProtocolMessage Endpoint::expect(std::initializer_list<MsgType> allowed, std::uint64_t step) {
  ProtocolMessage m = recv();
  for (MsgType t : allowed) {
    if (m.type == t) {
      if (is_tensor_message(t) && m.step != step) {
        throw ProtocolError(party_ + ": " + to_string(t) + " for step " + std::to_string(m.step) +
                            " while at step " + std::to_string(step));
      }
      return m;
    }
  }
  std::string want;
  for (MsgType t : allowed) want += (want.empty() ? "" : "|") + to_string(t);
  std::string got = to_string(m.type);
  if (m.type == MsgType::Control && !m.control.empty()) {
    got += "(kind " + std::to_string(static_cast<int>(m.control_kind())) + ")";
  }
  throw ProtocolError(party_ + ": expected " + want + ", received " + got);
}

void Endpoint::absorb(const ProtocolMessage& m) {
  if (!is_tensor_message(m.type)) return;
  ++tensor_messages_;
  auto mix = [this](std::uint64_t w) { digest_ = (digest_ ^ w) * 0x100000001b3ull; };
  mix(static_cast<std::uint64_t>(m.type));
  mix(m.step);
  for (std::size_t d : m.shape) mix(d);
  const float* p = m.payload.data();
  const std::size_t n = m.payload.size();
  std::size_t i = 0;
  for (; i + 1 < n; i += 2) {
    std::uint64_t w;
    std::memcpy(&w, p + i, sizeof w);
    mix(w);
  }
  if (i < n) {
    std::uint32_t w;
    std::memcpy(&w, p + i, sizeof w);
    mix(w);
  }
}

std::string encode_hello(std::uint64_t digest) {
  ByteWriter w;
  w.u8(kWireVersion);
  w.u64(digest);
  return w.take();
}

void Endpoint::hello(std::uint64_t config_digest) {
  send(ProtocolMessage::make_control(ControlKind::Hello, 0, encode_hello(config_digest)));
  ProtocolMessage r = expect({MsgType::Control}, 0);
  if (r.control_kind() == ControlKind::Reject) {
    throw SessionError(party_ + ": handshake refused: " + std::string(r.control_body()), last_good_);
  }
  if (r.control_kind() != ControlKind::Ack) throw ProtocolError(party_ + ": expected handshake Ack");
}

void Endpoint::accept_hello(std::uint64_t config_digest) {
  ProtocolMessage m = expect({MsgType::Control}, 0);
  if (m.control_kind() != ControlKind::Hello) throw ProtocolError(party_ + ": expected Hello");
  ByteReader r(m.control_body(), "hello");
  const std::uint8_t version = r.u8();
  const std::uint64_t digest = r.u64();
  std::string reason;
  if (version != kWireVersion) reason = "wire version mismatch";
  if (digest != config_digest) reason = "config digest mismatch";
  if (!reason.empty()) {
    send(ProtocolMessage::make_control(ControlKind::Reject, 0, reason));
    throw SessionError(party_ + ": refused peer: " + reason, last_good_);
  }
  send(ProtocolMessage::make_control(ControlKind::Ack, 0));
}

}  // namespace splitbench
