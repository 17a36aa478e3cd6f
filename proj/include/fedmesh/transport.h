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

// Length-prefixed binary protocol between one server and N clients over TCP.
//
// Frame layout (all integers big-endian):
//   magic "FDM1" | type u8 | round u32 | client_id u32 | payload_len u32 |
//   payload
// payload_len is at most 64 MiB. Doubles travel as IEEE-754 binary64,
// big-endian. A parameter vector is a u32 dimension followed by that many
// doubles.
//
// Payloads:
//   HELLO          version u32 | config_hash u64 | sample_count u64
//   GLOBAL_MODEL   params | learning_rate f64 | secure u8 | count u32 |
//                  count x (client_id u32, coefficient f64)
//   CLIENT_UPDATE  metadata | delta params | released params
//   MASKED_SHARE   metadata | count u32 | count x u64
//   ROUND_REPORT   accuracy, precision, recall, f1 (f64 each)
//   ABORT, BYE     reason u8 | UTF-8 text
// where metadata is
//   sample_count u64 | loss_before f64 | loss_after f64 | flagged u8 |
//   sigma f64 | clip_applied u8 | pre_clip_norm f64 | mechanism u8

#ifndef FEDMESH_TRANSPORT_H_
#define FEDMESH_TRANSPORT_H_

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/eval.h"
#include "fedmesh/federation.h"
#include "fedmesh/model.h"

namespace fedmesh {

inline constexpr std::array<uint8_t, 4> kFrameMagic = {'F', 'D', 'M', '1'};
inline constexpr size_t kFrameHeaderSize = 17;
inline constexpr uint32_t kMaxPayloadBytes = 64u << 20;
inline constexpr uint32_t kProtocolVersion = 1;
inline constexpr uint16_t kDefaultPort = 7700;

enum class MessageType : uint8_t {
  kHello = 1,
  kGlobalModel = 2,
  kClientUpdate = 3,
  kMaskedShare = 4,
  kRoundReport = 5,
  kAbort = 6,
  kBye = 7,
};

struct Frame {
  MessageType type = MessageType::kHello;
  uint32_t round = 0;
  uint32_t client_id = 0;
  std::vector<uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

absl::StatusOr<std::vector<uint8_t>> EncodeFrame(const Frame& frame);

// Reassembles frames from arbitrary chunks of a byte stream.
class FrameDecoder {
 public:
  void Feed(std::span<const uint8_t> bytes);

  // Next complete frame, nullopt if more bytes are needed, or an error:
  // DataLoss for a bad magic, InvalidArgument for an unknown message type,
  // ResourceExhausted for an oversize payload. After an error the decoder
  // refuses further input.
  absl::StatusOr<std::optional<Frame>> Next();

  size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<uint8_t> buffer_;
  size_t offset_ = 0;
  absl::Status error_;
};

absl::StatusOr<std::vector<uint8_t>> EncodeParams(const ParamVector& v);
// Parses one vector from the front of bytes; *consumed receives its length.
absl::StatusOr<ParamVector> DecodeParams(std::span<const uint8_t> bytes,
                                         size_t* consumed = nullptr);

enum class ByeReason : uint8_t {
  kDone = 0,
  kVersionMismatch = 1,
  kConfigMismatch = 2,
  kDuplicateClient = 3,
  kUnknownClient = 4,
  kHalted = 5,
};

struct Hello {
  uint32_t version = kProtocolVersion;
  uint64_t config_hash = 0;
  uint64_t sample_count = 0;
};

std::vector<uint8_t> EncodeHello(const Hello& hello);
absl::StatusOr<Hello> DecodeHello(std::span<const uint8_t> bytes);

absl::StatusOr<std::vector<uint8_t>> EncodeRoundPlan(const RoundPlan& plan);
absl::StatusOr<RoundPlan> DecodeRoundPlan(std::span<const uint8_t> bytes,
                                          uint32_t round);

// CLIENT_UPDATE or MASKED_SHARE frame for a contribution.
absl::StatusOr<Frame> ContributionFrame(const Contribution& contribution);
absl::StatusOr<Contribution> DecodeContribution(const Frame& frame);

std::vector<uint8_t> EncodeMetrics(const MetricsReport& metrics);
absl::StatusOr<MetricsReport> DecodeMetrics(std::span<const uint8_t> bytes);

std::vector<uint8_t> EncodeReason(ByeReason reason, std::string_view text);
std::pair<ByeReason, std::string> DecodeReason(std::span<const uint8_t> bytes);

// "host:port" with a numeric IPv4 host or "localhost".
struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = kDefaultPort;
};
absl::StatusOr<Endpoint> ParseEndpoint(std::string_view text);

using Clock = std::chrono::steady_clock;

// Owns a connected stream socket.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  // Retries refused connections until the deadline passes.
  static absl::StatusOr<Connection> Dial(const Endpoint& endpoint,
                                         Clock::time_point deadline);

  bool is_open() const { return fd_ >= 0; }
  absl::Status Send(const Frame& frame);
  absl::StatusOr<Frame> Receive(Clock::time_point deadline);
  void Close();

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

class Listener {
 public:
  Listener() = default;
  Listener(Listener&& other) noexcept;
  Listener& operator=(Listener&& other) noexcept;
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  // Port 0 picks an ephemeral port; see port().
  static absl::StatusOr<Listener> Bind(const Endpoint& endpoint);
  absl::StatusOr<Connection> Accept(Clock::time_point deadline);
  uint16_t port() const { return port_; }

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Server-side round driver: ships plans to remote clients and waits at the
// collect barrier. A client that fails to answer before the timeout, or
// disconnects, aborts the round.
class SocketServerDriver : public RoundDriver {
 public:
  SocketServerDriver(Listener listener, std::chrono::milliseconds timeout)
      : listener_(std::move(listener)), timeout_(timeout) {}

  // Handshakes until every expected client has joined. Duplicate, unknown
  // and wrong-version clients are sent BYE and dropped; a config hash
  // mismatch is sent BYE and fails with FailedPrecondition.
  absl::Status AcceptClients(const std::map<uint32_t, int64_t>& sample_counts,
                             uint64_t config_hash);

  absl::StatusOr<std::vector<Contribution>> Collect(
      const RoundPlan& plan) override;

  void BroadcastReport(uint32_t round, const MetricsReport& metrics);
  void Finish(ByeReason reason, std::string_view text);

 private:
  Listener listener_;
  std::chrono::milliseconds timeout_;
  std::map<uint32_t, Connection> clients_;
};

enum class JoinOutcome { kCompleted, kConfigMismatch, kRejected, kFailed };

struct JoinResult {
  JoinOutcome outcome = JoinOutcome::kFailed;
  std::string message;
  uint32_t rounds_served = 0;
};

// Client loop: handshake, then answer every GLOBAL_MODEL until BYE.
JoinResult RunClient(const ClientState& client, const ModelSpec& spec,
                     const TrainingSchedule& schedule,
                     uint64_t experiment_seed, int fixed_point_bits,
                     uint64_t config_hash, const Endpoint& server,
                     std::chrono::milliseconds timeout);

}  // namespace fedmesh

#endif  // FEDMESH_TRANSPORT_H_
