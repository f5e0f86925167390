// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splitbench/wire.hpp"

namespace splitbench {

struct TrafficMeter {
  std::uint64_t tokens_processed = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_received = 0;
  double wall_time = 0.0;  // seconds

  std::uint64_t total_bytes() const { return bytes_sent + bytes_received; }
};

/// Throughput, per-token volume and total volume. Token-normalised figures
/// are absent when nothing was processed.
struct EfficiencyReport {
  std::optional<double> throughput_tokens_per_s;
  std::optional<double> kb_per_token;  // kb = 1024 bytes
  double total_mb = 0.0;               // MB = 2^20 bytes
  TrafficMeter raw;
  std::string token_basis = "non-pad input tokens per forward pass";

  nlohmann::json to_json(bool include_timing = true) const;
};

EfficiencyReport meter_report(const TrafficMeter& meter);

/// Reliable, ordered, message-level duplex link between the two parties.
class Channel {
 public:
  virtual ~Channel() = default;

  void send(const ProtocolMessage& m);
  ProtocolMessage recv();
  virtual void close() = 0;

  TrafficMeter& meter() { return meter_; }
  const TrafficMeter& meter() const { return meter_; }

 protected:
  virtual void do_send(const ProtocolMessage& m) = 0;
  virtual ProtocolMessage do_recv() = 0;

 private:
  TrafficMeter meter_;
};

/// Two connected in-process endpoints. Messages are passed as values; meters
/// count the frame length each message would have on the wire.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair();

/// Listening socket for the Model Party. Port 0 picks an ephemeral port.
class TcpListener {
 public:
  explicit TcpListener(const std::string& addr_port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout = std::chrono::seconds(60));

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects to a listening Model Party, retrying until `timeout` elapses.
std::unique_ptr<Channel> tcp_connect(const std::string& addr_port,
                                     std::chrono::milliseconds timeout = std::chrono::seconds(30));

/// "host:port" split; throws ConfigError on malformed input.
std::pair<std::string, std::uint16_t> parse_addr_port(const std::string& s);

}  // namespace splitbench
