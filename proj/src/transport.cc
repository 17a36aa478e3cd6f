// Copyright 2026 The FedMesh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedmesh/transport.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "logging.h"

namespace fedmesh {
namespace {

class ByteWriter {
 public:
  void U8(uint8_t v) { out_.push_back(v); }
  void U32(uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<uint8_t>(v >> s));
  }
  void U64(uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out_.push_back(static_cast<uint8_t>(v >> s));
  }
  void F64(double v) { U64(std::bit_cast<uint64_t>(v)); }
  void Bytes(std::span<const uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
  }
  std::vector<uint8_t> Take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  bool U8(uint8_t& v) {
    if (remaining() < 1) return false;
    v = bytes_[pos_++];
    return true;
  }
  bool U32(uint32_t& v) {
    if (remaining() < 4) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return true;
  }
  bool U64(uint64_t& v) {
    if (remaining() < 8) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | bytes_[pos_++];
    return true;
  }
  bool F64(double& v) {
    uint64_t bits;
    if (!U64(bits)) return false;
    v = std::bit_cast<double>(bits);
    return true;
  }
  bool Params(ParamVector& v) {
    size_t used = 0;
    auto decoded = DecodeParams(bytes_.subspan(pos_), &used);
    if (!decoded.ok()) return false;
    v = std::move(*decoded);
    pos_ += used;
    return true;
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

absl::Status Truncated(absl::string_view what) {
  return absl::InvalidArgumentError(absl::StrCat("truncated ", what, " payload"));
}

bool KnownType(uint8_t t) { return t >= 1 && t <= 7; }

void WriteMetadata(ByteWriter& w, const ClientUpdate& u) {
  w.U64(static_cast<uint64_t>(u.sample_count));
  w.F64(u.local_loss_before);
  w.F64(u.local_loss_after);
  w.U8(u.flagged ? 1 : 0);
  w.F64(u.receipt.sigma);
  w.U8(u.receipt.clip_applied ? 1 : 0);
  w.F64(u.receipt.pre_clip_norm);
  w.U8(static_cast<uint8_t>(u.receipt.mechanism));
}

bool ReadMetadata(ByteReader& r, ClientUpdate& u) {
  uint64_t samples;
  uint8_t flagged, clipped, mechanism;
  if (!r.U64(samples) || !r.F64(u.local_loss_before) ||
      !r.F64(u.local_loss_after) || !r.U8(flagged) ||
      !r.F64(u.receipt.sigma) || !r.U8(clipped) ||
      !r.F64(u.receipt.pre_clip_norm) || !r.U8(mechanism)) {
    return false;
  }
  if (mechanism > 1) return false;
  u.sample_count = static_cast<int64_t>(samples);
  u.flagged = flagged != 0;
  u.receipt.clip_applied = clipped != 0;
  u.receipt.mechanism = static_cast<NoiseMechanism>(mechanism);
  return true;
}

}  // namespace

absl::StatusOr<std::vector<uint8_t>> EncodeFrame(const Frame& frame) {
  if (!KnownType(static_cast<uint8_t>(frame.type))) {
    return absl::InvalidArgumentError("unknown message type");
  }
  if (frame.payload.size() > kMaxPayloadBytes) {
    return absl::ResourceExhaustedError(
        absl::StrCat("payload of ", frame.payload.size(), " bytes exceeds ",
                     kMaxPayloadBytes));
  }
  ByteWriter w;
  w.Bytes(kFrameMagic);
  w.U8(static_cast<uint8_t>(frame.type));
  w.U32(frame.round);
  w.U32(frame.client_id);
  w.U32(static_cast<uint32_t>(frame.payload.size()));
  w.Bytes(frame.payload);
  return w.Take();
}

void FrameDecoder::Feed(std::span<const uint8_t> bytes) {
  if (!error_.ok()) return;
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

absl::StatusOr<std::optional<Frame>> FrameDecoder::Next() {
  if (!error_.ok()) return error_;
  const std::span<const uint8_t> pending =
      std::span<const uint8_t>(buffer_).subspan(offset_);
  // Reject a bad magic as soon as its bytes arrive.
  for (size_t i = 0; i < std::min<size_t>(4, pending.size()); ++i) {
    if (pending[i] != kFrameMagic[i]) {
      error_ = absl::DataLossError("bad frame magic");
      return error_;
    }
  }
  if (pending.size() >= 5 && !KnownType(pending[4])) {
    error_ = absl::InvalidArgumentError(
        absl::StrCat("unknown message type ", pending[4]));
    return error_;
  }
  if (pending.size() < kFrameHeaderSize) return std::nullopt;
  ByteReader r(pending.subspan(5));
  Frame frame;
  uint32_t length = 0;
  r.U32(frame.round);
  r.U32(frame.client_id);
  r.U32(length);
  if (length > kMaxPayloadBytes) {
    error_ = absl::ResourceExhaustedError(
        absl::StrCat("frame payload of ", length, " bytes is oversize"));
    return error_;
  }
  if (pending.size() < kFrameHeaderSize + length) return std::nullopt;
  frame.type = static_cast<MessageType>(pending[4]);
  frame.payload.assign(pending.begin() + kFrameHeaderSize,
                       pending.begin() + kFrameHeaderSize + length);
  offset_ += kFrameHeaderSize + length;
  if (offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  return frame;
}

absl::StatusOr<std::vector<uint8_t>> EncodeParams(const ParamVector& v) {
  if (v.size() >= (1 << 24)) {
    return absl::InvalidArgumentError("parameter vector too long to encode");
  }
  if (!v.allFinite()) {
    return absl::InvalidArgumentError("refusing to encode non-finite values");
  }
  ByteWriter w;
  w.U32(static_cast<uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.F64(v(i));
  return w.Take();
}

absl::StatusOr<ParamVector> DecodeParams(std::span<const uint8_t> bytes,
                                         size_t* consumed) {
  ByteReader r(bytes);
  uint32_t dim;
  if (!r.U32(dim)) return Truncated("parameter");
  if (dim >= (1u << 24)) {
    return absl::InvalidArgumentError("parameter dimension too large");
  }
  if (r.remaining() < static_cast<size_t>(dim) * 8) return Truncated("parameter");
  ParamVector v(dim);
  for (uint32_t i = 0; i < dim; ++i) {
    r.F64(v(i));
    if (!std::isfinite(v(i))) {
      return absl::InvalidArgumentError(
          absl::StrCat("non-finite parameter at index ", i));
    }
  }
  if (consumed != nullptr) *consumed = 4 + static_cast<size_t>(dim) * 8;
  return v;
}

std::vector<uint8_t> EncodeHello(const Hello& hello) {
  ByteWriter w;
  w.U32(hello.version);
  w.U64(hello.config_hash);
  w.U64(hello.sample_count);
  return w.Take();
}

absl::StatusOr<Hello> DecodeHello(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  Hello hello;
  if (!r.U32(hello.version) || !r.U64(hello.config_hash) ||
      !r.U64(hello.sample_count)) {
    return Truncated("HELLO");
  }
  return hello;
}

absl::StatusOr<std::vector<uint8_t>> EncodeRoundPlan(const RoundPlan& plan) {
  auto params = EncodeParams(plan.global);
  if (!params.ok()) return params.status();
  ByteWriter w;
  w.Bytes(*params);
  w.F64(plan.learning_rate);
  w.U8(plan.secure ? 1 : 0);
  w.U32(static_cast<uint32_t>(plan.participants.size()));
  for (uint32_t id : plan.participants) {
    w.U32(id);
    auto it = plan.coefficients.find(id);
    w.F64(it == plan.coefficients.end() ? 0.0 : it->second);
  }
  return w.Take();
}

absl::StatusOr<RoundPlan> DecodeRoundPlan(std::span<const uint8_t> bytes,
                                          uint32_t round) {
  ByteReader r(bytes);
  RoundPlan plan;
  plan.round = round;
  uint8_t secure;
  uint32_t count;
  if (!r.Params(plan.global) || !r.F64(plan.learning_rate) || !r.U8(secure) ||
      !r.U32(count)) {
    return Truncated("GLOBAL_MODEL");
  }
  if (static_cast<size_t>(count) * 12 > r.remaining()) {
    return Truncated("GLOBAL_MODEL");
  }
  plan.secure = secure != 0;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t id = 0;
    double coefficient = 0.0;
    r.U32(id);
    r.F64(coefficient);
    plan.participants.push_back(id);
    if (plan.secure) plan.coefficients[id] = coefficient;
  }
  return plan;
}

absl::StatusOr<Frame> ContributionFrame(const Contribution& contribution) {
  const ClientUpdate& u = contribution.update;
  Frame frame;
  frame.round = u.round;
  frame.client_id = u.client_id;
  ByteWriter w;
  WriteMetadata(w, u);
  if (contribution.share.has_value()) {
    frame.type = MessageType::kMaskedShare;
    const auto& words = contribution.share->masked_values;
    w.U32(static_cast<uint32_t>(words.size()));
    for (uint64_t word : words) w.U64(word);
  } else {
    frame.type = MessageType::kClientUpdate;
    auto delta = EncodeParams(u.delta);
    if (!delta.ok()) return delta.status();
    auto params = EncodeParams(u.params);
    if (!params.ok()) return params.status();
    w.Bytes(*delta);
    w.Bytes(*params);
  }
  frame.payload = w.Take();
  return frame;
}

absl::StatusOr<Contribution> DecodeContribution(const Frame& frame) {
  if (frame.type != MessageType::kClientUpdate &&
      frame.type != MessageType::kMaskedShare) {
    return absl::InvalidArgumentError(absl::StrCat(
        "expected an update, got message type ",
        static_cast<int>(frame.type)));
  }
  Contribution out;
  out.update.client_id = frame.client_id;
  out.update.round = frame.round;
  ByteReader r(frame.payload);
  if (!ReadMetadata(r, out.update)) return Truncated("update metadata");
  if (frame.type == MessageType::kMaskedShare) {
    uint32_t count;
    if (!r.U32(count) || r.remaining() != static_cast<size_t>(count) * 8) {
      return Truncated("MASKED_SHARE");
    }
    MaskedShare share;
    share.client_id = frame.client_id;
    share.round = frame.round;
    share.masked_values.resize(count);
    for (uint32_t i = 0; i < count; ++i) r.U64(share.masked_values[i]);
    out.share = std::move(share);
  } else {
    if (!r.Params(out.update.delta) || !r.Params(out.update.params)) {
      return Truncated("CLIENT_UPDATE");
    }
  }
  return out;
}

std::vector<uint8_t> EncodeMetrics(const MetricsReport& metrics) {
  ByteWriter w;
  w.F64(metrics.accuracy);
  w.F64(metrics.precision);
  w.F64(metrics.recall);
  w.F64(metrics.f1);
  return w.Take();
}

absl::StatusOr<MetricsReport> DecodeMetrics(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  MetricsReport m;
  if (!r.F64(m.accuracy) || !r.F64(m.precision) || !r.F64(m.recall) ||
      !r.F64(m.f1)) {
    return Truncated("ROUND_REPORT");
  }
  return m;
}

std::vector<uint8_t> EncodeReason(ByeReason reason, std::string_view text) {
  std::vector<uint8_t> out;
  out.push_back(static_cast<uint8_t>(reason));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

std::pair<ByeReason, std::string> DecodeReason(std::span<const uint8_t> bytes) {
  if (bytes.empty()) return {ByeReason::kDone, ""};
  return {static_cast<ByeReason>(bytes[0]),
          std::string(bytes.begin() + 1, bytes.end())};
}

absl::StatusOr<Endpoint> ParseEndpoint(std::string_view view) {
  const std::string text(view);
  const size_t colon = text.rfind(':');
  if (colon == std::string::npos) {
    return absl::InvalidArgumentError(
        absl::StrCat("expected HOST:PORT, got '", text, "'"));
  }
  Endpoint e;
  e.host = std::string(text.substr(0, colon));
  if (e.host.empty() || e.host == "localhost") e.host = "127.0.0.1";
  uint32_t port;
  if (!absl::SimpleAtoi(text.substr(colon + 1), &port) || port > 65535) {
    return absl::InvalidArgumentError(
        absl::StrCat("bad port in '", text, "'"));
  }
  e.port = static_cast<uint16_t>(port);
  in_addr probe;
  if (inet_pton(AF_INET, e.host.c_str(), &probe) != 1) {
    return absl::InvalidArgumentError(
        absl::StrCat("host must be a numeric IPv4 address: '", e.host, "'"));
  }
  return e;
}

namespace {

int MillisUntil(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
      deadline - Clock::now());
  return static_cast<int>(std::max<int64_t>(0, left.count()));
}

sockaddr_in ToSockaddr(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(e.port);
  inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr);
  return addr;
}

absl::Status Errno(absl::string_view what) {
  return absl::UnavailableError(absl::StrCat(what, ": ", std::strerror(errno)));
}

}  // namespace

Connection::Connection(Connection&& other) noexcept
    : fd_(other.fd_), decoder_(std::move(other.decoder_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    Close();
    fd_ = other.fd_;
    decoder_ = std::move(other.decoder_);
    other.fd_ = -1;
  }
  return *this;
}

Connection::~Connection() { Close(); }

void Connection::Close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

absl::StatusOr<Connection> Connection::Dial(const Endpoint& endpoint,
                                            Clock::time_point deadline) {
  const sockaddr_in addr = ToSockaddr(endpoint);
  while (true) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return Errno("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr),
                  sizeof(addr)) == 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Connection(fd);
    }
    const int err = errno;
    ::close(fd);
    if (Clock::now() >= deadline) {
      errno = err;
      return Errno(absl::StrCat("connect to ", endpoint.host, ":",
                                endpoint.port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

absl::Status Connection::Send(const Frame& frame) {
  if (fd_ < 0) return absl::UnavailableError("connection is closed");
  auto bytes = EncodeFrame(frame);
  if (!bytes.ok()) return bytes.status();
  size_t sent = 0;
  while (sent < bytes->size()) {
    const ssize_t n = ::send(fd_, bytes->data() + sent, bytes->size() - sent,
                             MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return Errno("send");
    }
    sent += static_cast<size_t>(n);
  }
  return absl::OkStatus();
}

absl::StatusOr<Frame> Connection::Receive(Clock::time_point deadline) {
  if (fd_ < 0) return absl::UnavailableError("connection is closed");
  std::vector<uint8_t> chunk(1 << 16);
  while (true) {
    auto next = decoder_.Next();
    if (!next.ok()) {
      Close();
      return next.status();
    }
    if (next->has_value()) return std::move(**next);
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, MillisUntil(deadline));
    if (ready < 0) {
      if (errno == EINTR) continue;
      return Errno("poll");
    }
    if (ready == 0) return absl::DeadlineExceededError("receive timed out");
    const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return Errno("recv");
    }
    if (n == 0) {
      Close();
      return absl::UnavailableError(
          decoder_.buffered() > 0 ? "stream truncated mid-frame"
                                  : "peer closed the connection");
    }
    decoder_.Feed(std::span<const uint8_t>(chunk.data(), n));
  }
}

Listener::Listener(Listener&& other) noexcept
    : fd_(other.fd_), port_(other.port_) {
  other.fd_ = -1;
}

Listener& Listener::operator=(Listener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    port_ = other.port_;
    other.fd_ = -1;
  }
  return *this;
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

absl::StatusOr<Listener> Listener::Bind(const Endpoint& endpoint) {
  Listener l;
  l.fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (l.fd_ < 0) return Errno("socket");
  const int one = 1;
  ::setsockopt(l.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const sockaddr_in addr = ToSockaddr(endpoint);
  if (::bind(l.fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) !=
      0) {
    return Errno(absl::StrCat("bind ", endpoint.host, ":", endpoint.port));
  }
  if (::listen(l.fd_, 64) != 0) return Errno("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(l.fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  l.port_ = ntohs(bound.sin_port);
  return l;
}

absl::StatusOr<Connection> Listener::Accept(Clock::time_point deadline) {
  while (true) {
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, MillisUntil(deadline));
    if (ready < 0) {
      if (errno == EINTR) continue;
      return Errno("poll");
    }
    if (ready == 0) {
      return absl::DeadlineExceededError("timed out waiting for clients");
    }
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      return Errno("accept");
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Connection(fd);
  }
}

absl::Status SocketServerDriver::AcceptClients(
    const std::map<uint32_t, int64_t>& sample_counts, uint64_t config_hash) {
  const auto deadline = Clock::now() + timeout_;
  while (clients_.size() < sample_counts.size()) {
    auto conn = listener_.Accept(deadline);
    if (!conn.ok()) {
      return absl::DeadlineExceededError(absl::StrCat(
          "only ", clients_.size(), " of ", sample_counts.size(),
          " clients joined: ", conn.status().message()));
    }
    auto frame = conn->Receive(Clock::now() + timeout_);
    if (!frame.ok() || frame->type != MessageType::kHello) {
      spdlog::warn("dropping a connection that did not open with HELLO");
      continue;
    }
    const uint32_t id = frame->client_id;
    auto hello = DecodeHello(frame->payload);
    auto reject = [&](ByeReason reason, const std::string& text) {
      spdlog::warn("rejecting client {}: {}", id, text);
      (void)conn->Send({MessageType::kBye, 0, id, EncodeReason(reason, text)});
    };
    if (!hello.ok() || hello->version != kProtocolVersion) {
      reject(ByeReason::kVersionMismatch, "protocol version mismatch");
      continue;
    }
    if (hello->config_hash != config_hash) {
      reject(ByeReason::kConfigMismatch,
             absl::StrCat("config hash ", absl::Hex(hello->config_hash),
                          " != server ", absl::Hex(config_hash)));
      return absl::FailedPreconditionError(absl::StrCat(
          "client ", id, " joined with a different experiment config"));
    }
    auto expected = sample_counts.find(id);
    if (expected == sample_counts.end()) {
      reject(ByeReason::kUnknownClient,
             absl::StrCat("client id ", id, " is not part of the experiment"));
      continue;
    }
    if (clients_.contains(id)) {
      reject(ByeReason::kDuplicateClient,
             absl::StrCat("client id ", id, " is already connected"));
      continue;
    }
    if (static_cast<int64_t>(hello->sample_count) != expected->second) {
      reject(ByeReason::kConfigMismatch, "sample count mismatch");
      return absl::FailedPreconditionError(
          absl::StrCat("client ", id, " reports ", hello->sample_count,
                       " samples, expected ", expected->second));
    }
    if (absl::Status s = conn->Send({MessageType::kHello, 0, id,
                                     EncodeHello({kProtocolVersion,
                                                  config_hash, 0})});
        !s.ok()) {
      continue;
    }
    spdlog::info("client {} joined ({}/{})", id, clients_.size() + 1,
                 sample_counts.size());
    clients_.emplace(id, std::move(*conn));
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<Contribution>> SocketServerDriver::Collect(
    const RoundPlan& plan) {
  auto payload = EncodeRoundPlan(plan);
  if (!payload.ok()) return payload.status();
  for (uint32_t id : plan.participants) {
    auto it = clients_.find(id);
    if (it == clients_.end() || !it->second.is_open()) {
      return absl::AbortedError(absl::StrCat("client ", id, " is gone"));
    }
    if (absl::Status s = it->second.Send(
            {MessageType::kGlobalModel, plan.round, id, *payload});
        !s.ok()) {
      it->second.Close();
      return absl::AbortedError(
          absl::StrCat("client ", id, ": ", s.message()));
    }
  }

  // Collect barrier: one worker per participant connection.
  const auto deadline = Clock::now() + timeout_;
  std::vector<absl::StatusOr<Contribution>> results(
      plan.participants.size(), absl::UnknownError("not received"));
  std::vector<std::thread> workers;
  for (size_t i = 0; i < plan.participants.size(); ++i) {
    workers.emplace_back([&, i] {
      const uint32_t id = plan.participants[i];
      Connection& conn = clients_.at(id);
      auto frame = conn.Receive(deadline);
      if (!frame.ok()) {
        conn.Close();
        results[i] = frame.status();
        return;
      }
      if (frame->client_id != id) {
        results[i] = absl::InvalidArgumentError("client id mismatch");
        return;
      }
      results[i] = DecodeContribution(*frame);
    });
  }
  for (auto& w : workers) w.join();

  std::vector<Contribution> out;
  for (size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok()) {
      return absl::AbortedError(absl::StrCat(
          "client ", plan.participants[i], ": ", results[i].status().message()));
    }
    out.push_back(std::move(*results[i]));
  }
  return out;
}

void SocketServerDriver::BroadcastReport(uint32_t round,
                                         const MetricsReport& metrics) {
  for (auto& [id, conn] : clients_) {
    if (conn.is_open()) {
      (void)conn.Send(
          {MessageType::kRoundReport, round, id, EncodeMetrics(metrics)});
    }
  }
}

void SocketServerDriver::Finish(ByeReason reason, std::string_view text) {
  for (auto& [id, conn] : clients_) {
    if (!conn.is_open()) continue;
    if (reason != ByeReason::kDone) {
      (void)conn.Send({MessageType::kAbort, 0, id, EncodeReason(reason, text)});
    }
    (void)conn.Send({MessageType::kBye, 0, id, EncodeReason(reason, text)});
    conn.Close();
  }
  // Connections still queued in the backlog are reset rather than left
  // waiting for a handshake that will never come.
  listener_ = Listener();
}

JoinResult RunClient(const ClientState& client, const ModelSpec& spec,
                     const TrainingSchedule& schedule,
                     uint64_t experiment_seed, int fixed_point_bits,
                     uint64_t config_hash, const Endpoint& server,
                     std::chrono::milliseconds timeout) {
  JoinResult result;
  auto conn = Connection::Dial(server, Clock::now() + timeout);
  if (!conn.ok()) {
    result.message = std::string(conn.status().message());
    return result;
  }
  const Hello hello{kProtocolVersion, config_hash,
                    static_cast<uint64_t>(client.local_data.size())};
  if (absl::Status s = conn->Send({MessageType::kHello, 0, client.client_id,
                                   EncodeHello(hello)});
      !s.ok()) {
    result.message = std::string(s.message());
    return result;
  }
  // Idle waits cover the time other clients take to join and train.
  const auto idle = timeout * 10;
  while (true) {
    auto frame = conn->Receive(Clock::now() + idle);
    if (!frame.ok()) {
      result.message = std::string(frame.status().message());
      return result;
    }
    switch (frame->type) {
      case MessageType::kHello:
        spdlog::info("client {} accepted by server", client.client_id);
        break;
      case MessageType::kGlobalModel: {
        auto plan = DecodeRoundPlan(frame->payload, frame->round);
        if (!plan.ok()) {
          result.message = std::string(plan.status().message());
          return result;
        }
        auto contribution = ClientRound(client, *plan, spec, schedule,
                                        experiment_seed, fixed_point_bits);
        if (!contribution.ok()) {
          result.message = std::string(contribution.status().message());
          return result;
        }
        auto reply = ContributionFrame(*contribution);
        if (!reply.ok()) {
          result.message = std::string(reply.status().message());
          return result;
        }
        if (absl::Status s = conn->Send(*reply); !s.ok()) {
          result.message = std::string(s.message());
          return result;
        }
        ++result.rounds_served;
        break;
      }
      case MessageType::kRoundReport:
        if (auto m = DecodeMetrics(frame->payload); m.ok()) {
          spdlog::debug("round {} accuracy {}", frame->round, m->accuracy);
        }
        break;
      case MessageType::kAbort: {
        auto [reason, text] = DecodeReason(frame->payload);
        spdlog::warn("server aborted: {}", text);
        break;
      }
      case MessageType::kBye: {
        auto [reason, text] = DecodeReason(frame->payload);
        result.message = text;
        switch (reason) {
          case ByeReason::kDone:
            result.outcome = JoinOutcome::kCompleted;
            break;
          case ByeReason::kConfigMismatch:
            result.outcome = JoinOutcome::kConfigMismatch;
            break;
          case ByeReason::kHalted:
            result.outcome = JoinOutcome::kFailed;
            break;
          default:
            result.outcome = JoinOutcome::kRejected;
        }
        return result;
      }
      default:
        result.message = "unexpected message from server";
        return result;
    }
  }
}

}  // namespace fedmesh
