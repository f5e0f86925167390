// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <exception>
#include <memory>
#include <thread>
#include <vector>

#include "splitbench/channel.hpp"
#include "splitbench/protocol.hpp"
#include "splitbench/session.hpp"

namespace splitbench {

/// Serves a Model Party on a worker thread over `channel`. After join() the
/// slice, the received-and-sent transcript and the meter are the Model
/// Party's final state; a serve-side error is rethrown from join().
class ModelPartyRunner {
 public:
  ModelPartyRunner(std::unique_ptr<Channel> channel, PartitionMode mode, ModelSlice slice,
                   PartyOptions options, std::uint64_t config_digest);
  ~ModelPartyRunner();
  ModelPartyRunner(const ModelPartyRunner&) = delete;
  ModelPartyRunner& operator=(const ModelPartyRunner&) = delete;

  void join();
  /// Closes the channel so a blocked serve loop exits, then joins quietly.
  void abort();

  const ModelSlice& slice() const { return party_->slice(); }
  const std::vector<ProtocolMessage>& transcript() const { return endpoint_->transcript(); }
  const TrafficMeter& meter() const { return channel_->meter(); }

 private:
  std::unique_ptr<Channel> channel_;
  std::unique_ptr<Endpoint> endpoint_;
  std::unique_ptr<ModelParty> party_;
  std::thread worker_;
  std::exception_ptr error_;
};

}  // namespace splitbench
