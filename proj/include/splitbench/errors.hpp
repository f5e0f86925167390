// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace splitbench {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class FrameError : public Error {
 public:
  using Error::Error;
};

// Transport-level failure. Carries the last sequence number that was
// delivered intact so callers can report where the session broke.
class SessionError : public Error {
 public:
  SessionError(const std::string& what, std::uint64_t last_good_seq)
      : Error(what + " (last good seq_no=" + std::to_string(last_good_seq) + ")"),
        last_good_seq_(last_good_seq) {}
  std::uint64_t last_good_seq() const { return last_good_seq_; }

 private:
  std::uint64_t last_good_seq_;
};

// Raised by a channel whose peer has gone away; sessions rethrow it as a
// SessionError.
class ChannelClosed : public Error {
 public:
  using Error::Error;
};

class AttackError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace splitbench
