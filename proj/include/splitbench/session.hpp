// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "splitbench/channel.hpp"
#include "splitbench/wire.hpp"

namespace splitbench {

/// One party's view of a session: assigns sequence numbers, checks that they
/// increase, records tensor messages in order and turns transport failures
/// into SessionError.
class Endpoint {
 public:
  Endpoint(Channel& channel, std::string party);

  void send(ProtocolMessage m);
  ProtocolMessage recv();
  /// Receives and checks the type; anything else is a ProtocolError naming
  /// both the expected and the received type.
  ProtocolMessage expect(std::initializer_list<MsgType> allowed, std::uint64_t step);

  /// Data-side handshake: sends Hello and waits for Ack; a Reject is refused.
  void hello(std::uint64_t config_digest);
  /// Model-side handshake: answers Hello with Ack, or Reject on a digest mismatch.
  void accept_hello(std::uint64_t config_digest);

  const std::vector<ProtocolMessage>& transcript() const { return transcript_; }
  std::vector<ProtocolMessage> take_transcript() { return std::move(transcript_); }
  void set_recording(bool on) { recording_ = on; }
  /// Every frame sent or received, control frames included, is appended to
  /// `sink` (null to stop).
  void log_frames(std::vector<ProtocolMessage>* sink) { frame_log_ = sink; }
  /// Running hash of every tensor message (type, step, shape, payload bits)
  /// sent or received, whether or not it was recorded.
  std::uint64_t stream_digest() const { return digest_; }
  std::uint64_t tensor_messages() const { return tensor_messages_; }

  Channel& channel() { return channel_; }
  const std::string& party() const { return party_; }
  std::uint64_t last_good_seq() const { return last_good_; }

 private:
  std::uint64_t next_seq() const { return std::max(last_sent_, last_recv_) + 1; }

  Channel& channel_;
  std::string party_;
  std::uint64_t last_sent_ = 0;
  std::uint64_t last_recv_ = 0;
  std::uint64_t last_good_ = 0;
  bool recording_ = true;
  std::uint64_t digest_ = 0xcbf29ce484222325ull;
  std::uint64_t tensor_messages_ = 0;
  void absorb(const ProtocolMessage& m);
  std::vector<ProtocolMessage> transcript_;
  std::vector<ProtocolMessage>* frame_log_ = nullptr;
};

std::string encode_hello(std::uint64_t digest);

}  // namespace splitbench
