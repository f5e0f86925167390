// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/party_runner.hpp"

namespace splitbench {

ModelPartyRunner::ModelPartyRunner(std::unique_ptr<Channel> channel, PartitionMode mode,
                                   ModelSlice slice, PartyOptions options,
                                   std::uint64_t config_digest)
    : channel_(std::move(channel)),
      endpoint_(std::make_unique<Endpoint>(*channel_, "model party")),
      party_(std::make_unique<ModelParty>(mode, std::move(slice), *endpoint_, options)) {
  worker_ = std::thread([this, config_digest] {
    try {
      party_->serve(config_digest);
    } catch (...) {
      error_ = std::current_exception();
      channel_->close();
    }
  });
}

ModelPartyRunner::~ModelPartyRunner() { abort(); }

void ModelPartyRunner::join() {
  if (worker_.joinable()) worker_.join();
  if (error_) std::rethrow_exception(std::exchange(error_, nullptr));
}

void ModelPartyRunner::abort() {
  if (!worker_.joinable()) return;
  channel_->close();
  worker_.join();
  error_ = nullptr;
}

}  // namespace splitbench
