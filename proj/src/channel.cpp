// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/channel.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "splitbench/bytes.hpp"
#include "splitbench/errors.hpp"

namespace splitbench {

nlohmann::json EfficiencyReport::to_json(bool include_timing) const {
  nlohmann::json j{{"tokens_processed", raw.tokens_processed},
                   {"bytes_sent", raw.bytes_sent},
                   {"bytes_received", raw.bytes_received},
                   {"frames_sent", raw.frames_sent},
                   {"frames_received", raw.frames_received},
                   {"total_mb", total_mb},
                   {"kb_per_token", kb_per_token ? nlohmann::json(*kb_per_token) : nlohmann::json()},
                   {"token_basis", token_basis}};
  if (include_timing) {
    j["wall_time_s"] = raw.wall_time;
    j["throughput_tokens_per_s"] =
        throughput_tokens_per_s ? nlohmann::json(*throughput_tokens_per_s) : nlohmann::json();
  }
  return j;
}

EfficiencyReport meter_report(const TrafficMeter& meter) {
  EfficiencyReport r;
  r.raw = meter;
  const double bytes = static_cast<double>(meter.total_bytes());
  r.total_mb = bytes / (1024.0 * 1024.0);
  if (meter.tokens_processed > 0) {
    const double tokens = static_cast<double>(meter.tokens_processed);
    r.kb_per_token = bytes / 1024.0 / tokens;
    if (meter.wall_time > 0.0) r.throughput_tokens_per_s = tokens / meter.wall_time;
  }
  return r;
}

void Channel::send(const ProtocolMessage& m) {
  do_send(m);
  meter_.bytes_sent += frame_length(m);
  ++meter_.frames_sent;
}

ProtocolMessage Channel::recv() {
  ProtocolMessage m = do_recv();
  meter_.bytes_received += frame_length(m);
  ++meter_.frames_received;
  return m;
}

namespace {

struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<ProtocolMessage> queue;
  bool closed = false;
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<Mailbox> in, std::shared_ptr<Mailbox> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~InProcessChannel() override { close(); }

  void close() override {
    for (auto* box : {in_.get(), out_.get()}) {
      std::lock_guard lock(box->mu);
      box->closed = true;
      box->cv.notify_all();
    }
  }

 protected:
  void do_send(const ProtocolMessage& m) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw ChannelClosed("in-process channel: peer closed");
    out_->queue.push_back(m);
    out_->cv.notify_one();
  }

  ProtocolMessage do_recv() override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->queue.empty() || in_->closed; });
    if (in_->queue.empty()) throw ChannelClosed("in-process channel: peer closed");
    ProtocolMessage m = std::move(in_->queue.front());
    in_->queue.pop_front();
    return m;
  }

 private:
  std::shared_ptr<Mailbox> in_;
  std::shared_ptr<Mailbox> out_;
};

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void close() override {
    const int fd = fd_.exchange(-1);
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
  }

 protected:
  void do_send(const ProtocolMessage& m) override {
    const std::string frame = encode(m);
    std::size_t off = 0;
    while (off < frame.size()) {
      if (fd_ < 0) throw ChannelClosed("tcp channel: closed");
      ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw ChannelClosed(std::string("tcp channel: send failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  ProtocolMessage do_recv() override {
    std::string frame = read_exact(kFramePrefixBytes);
    const auto ndims = static_cast<std::uint8_t>(frame.back());
    frame += read_exact(frame_dims_bytes(ndims));
    ByteReader len(std::string_view(frame).substr(frame.size() - 8), "frame length");
    const std::uint64_t payload = len.u64();
    if (payload > (std::uint64_t{1} << 34)) throw FrameError("frame: implausible payload length");
    frame += read_exact(payload);
    return decode(frame);
  }

 private:
  std::string read_exact(std::size_t n) {
    std::string out(n, '\0');
    std::size_t off = 0;
    while (off < n) {
      if (fd_ < 0) throw ChannelClosed("tcp channel: closed");
      ssize_t r = ::recv(fd_, out.data() + off, n - off, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw ChannelClosed("tcp channel: peer disconnected");
      if (r < 0) throw ChannelClosed(std::string("tcp channel: recv failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(r);
    }
    return out;
  }

  std::atomic<int> fd_;
};

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  const std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw ConfigError("cannot resolve host '" + host + "'");
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

}  // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair() {
  auto a = std::make_shared<Mailbox>();
  auto b = std::make_shared<Mailbox>();
  return {std::make_unique<InProcessChannel>(a, b), std::make_unique<InProcessChannel>(b, a)};
}

std::pair<std::string, std::uint16_t> parse_addr_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address '" + s + "' is not host:port");
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw ConfigError("address '" + s + "' has an invalid port");
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

TcpListener::TcpListener(const std::string& addr_port) {
  auto [host, port] = parse_addr_port(addr_port);
  sockaddr_in sa = resolve(host, port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(fd_, 1) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd_);
    throw Error("cannot listen on " + addr_port + ": " + err);
  }
  socklen_t len = sizeof(sa);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  int ready = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (ready <= 0) throw ChannelClosed("no peer connected within the accept timeout");
  int c = ::accept(fd_, nullptr, nullptr);
  if (c < 0) throw ChannelClosed(std::string("accept: ") + std::strerror(errno));
  return std::make_unique<TcpChannel>(c);
}

std::unique_ptr<Channel> tcp_connect(const std::string& addr_port, std::chrono::milliseconds timeout) {
  auto [host, port] = parse_addr_port(addr_port);
  sockaddr_in sa = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) {
      return std::make_unique<TcpChannel>(fd);
    }
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ChannelClosed("cannot connect to " + addr_port);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace splitbench
