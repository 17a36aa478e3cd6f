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

// The round engine: local gradient descent on each client, private release of
// the result, aggregation under a weighting policy, and evaluation of the new
// global model.
//
// A client trains from the broadcast model theta_t and releases
//   delta_i  = Privatize(theta_local - theta_t)
//   params_i = theta_t + delta_i          (exactly theta_local without DP)
// The server forms theta_{t+1} = sum_i a_i * params_i with a convex set of
// coefficients a_i, which equals theta_t + sum_i a_i * delta_i up to
// rounding. Summation runs in ascending client id order, so the result does
// not depend on arrival order.

#ifndef FEDMESH_FEDERATION_H_
#define FEDMESH_FEDERATION_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/eval.h"
#include "fedmesh/model.h"
#include "fedmesh/privacy.h"
#include "fedmesh/secure_sum.h"

namespace fedmesh {

struct TrainingSchedule {
  int rounds = 100;
  int local_epochs = 5;
  // Absent means full-batch steps.
  std::optional<int> batch_size;
  double learning_rate = 0.1;
  double lr_decay = 0.99;
  double participation_fraction = 1.0;

  friend bool operator==(const TrainingSchedule&,
                         const TrainingSchedule&) = default;
};

absl::Status ValidateSchedule(const TrainingSchedule& schedule);

// learning_rate * lr_decay^(round - 1), by repeated multiplication.
double RoundLearningRate(const TrainingSchedule& schedule, uint32_t round);

struct ClientState {
  uint32_t client_id = 0;
  std::string domain_tag;
  Dataset local_data;
  PrivacyBudget budget;
  std::optional<double> weight_override;
};

struct ClientUpdate {
  uint32_t client_id = 0;
  uint32_t round = 0;
  ParamVector delta;
  ParamVector params;
  int64_t sample_count = 0;
  double local_loss_before = 0.0;
  double local_loss_after = 0.0;
  NoiseReceipt receipt;
  // Training diverged; the update is excluded from aggregation.
  bool flagged = false;
};

enum class PolicyKind { kUniform, kSizeWeighted, kCustomWeighted };

struct AggregationPolicy {
  PolicyKind kind = PolicyKind::kUniform;
  // Required for every participant under kCustomWeighted.
  std::map<uint32_t, double> weights;
};

struct Contributor {
  uint32_t client_id = 0;
  int64_t sample_count = 0;
};

// Convex coefficients for the given contributors:
//   uniform        a_i = 1 / N
//   size_weighted  a_i = |D_i| / sum |D_j|
//   custom         a_i = w_i / sum w_j
absl::StatusOr<std::map<uint32_t, double>> AggregationCoefficients(
    std::span<const Contributor> contributors, const AggregationPolicy& policy);

// Weighted combination of the released parameters of all unflagged updates.
absl::StatusOr<ParamVector> Aggregate(std::span<const ClientUpdate> updates,
                                      const AggregationPolicy& policy,
                                      const ParamVector& theta_global);

// w_i proportional to |D_i| * min(eps_i, cap) / cap, normalized to sum 1.
// A disabled budget counts as eps_i = cap. Falls back to uniform (with a
// warning) when every weight is zero.
std::map<uint32_t, double> DerivePrivacyWeights(
    std::span<const ClientState> clients, double epsilon_cap = 8.0);

// ceil(fraction * N) ids chosen by a seeded Fisher-Yates shuffle, returned
// in ascending order.
std::vector<uint32_t> SampleParticipants(std::span<const uint32_t> client_ids,
                                         double fraction,
                                         uint64_t experiment_seed,
                                         uint32_t round);

// Runs local_epochs passes of gradient descent over data (full-batch or
// shuffled mini-batches) starting from theta. Returns false if the iterate
// stops being finite. Shared by clients and the centralized baseline.
bool DescendLocally(const ModelSpec& spec, ParamVector& theta,
                    const Dataset& data, const TrainingSchedule& schedule,
                    double learning_rate, uint64_t shuffle_seed);

uint64_t BatchShuffleSeed(uint64_t experiment_seed, uint32_t client_id,
                          uint32_t round);

absl::StatusOr<ClientUpdate> LocalTrain(const ClientState& client,
                                        const ParamVector& theta_global,
                                        const TrainingSchedule& schedule,
                                        const ModelSpec& spec, uint32_t round,
                                        double learning_rate,
                                        uint64_t experiment_seed);

struct EvalSplit {
  std::string domain;
  Dataset data;
};

// Everything fixed for the duration of an experiment.
struct FederationSetup {
  ModelSpec spec;
  TrainingSchedule schedule;
  AggregationPolicy policy;
  // Ascending client_id.
  std::vector<ClientState> clients;
  // Held-out split per domain, in domain order.
  std::vector<EvalSplit> domain_tests;
  Dataset pooled_test;
  std::vector<int> tracked_indices;
  bool secure_aggregation = false;
  int fixed_point_bits = FixedPointCodec::kDefaultScaleBits;
  uint64_t seed = 0;
  Averaging averaging = Averaging::kMacro;
};

absl::Status ValidateSetup(const FederationSetup& setup);

// Policy with per-client weight overrides merged in.
AggregationPolicy EffectivePolicy(const FederationSetup& setup);

// The server's instructions for one round.
struct RoundPlan {
  uint32_t round = 0;
  double learning_rate = 0.0;
  ParamVector global;
  std::vector<uint32_t> participants;
  // Pre-computed under secure aggregation so that clients can scale their
  // contribution before masking; empty otherwise.
  std::map<uint32_t, double> coefficients;
  bool secure = false;
};

// One client's answer. Under secure aggregation update.params and
// update.delta are left empty and the share carries the scaled, masked
// parameters.
struct Contribution {
  ClientUpdate update;
  std::optional<MaskedShare> share;
};

// Client-side work for a round: train, release, and mask if required.
absl::StatusOr<Contribution> ClientRound(const ClientState& client,
                                         const RoundPlan& plan,
                                         const ModelSpec& spec,
                                         const TrainingSchedule& schedule,
                                         uint64_t experiment_seed,
                                         int fixed_point_bits);

// Moves a plan to the clients and brings their contributions back.
class RoundDriver {
 public:
  virtual ~RoundDriver() = default;
  virtual absl::StatusOr<std::vector<Contribution>> Collect(
      const RoundPlan& plan) = 0;
};

// Trains every participant in this process.
class InProcessDriver : public RoundDriver {
 public:
  explicit InProcessDriver(const FederationSetup& setup) : setup_(setup) {}
  absl::StatusOr<std::vector<Contribution>> Collect(
      const RoundPlan& plan) override;

 private:
  const FederationSetup& setup_;
};

struct FederationState {
  FederationSetup setup;
  ParamVector theta;
  uint32_t next_round = 1;
};

FederationState InitialState(FederationSetup setup);

// Evaluates theta on every domain split and the pooled test set.
absl::Status EvaluateInto(const FederationSetup& setup,
                          const ParamVector& theta, RoundReport& report);

// One broadcast-train-collect-aggregate cycle. An aborted attempt is retried
// once with the same participants; a second failure is returned.
absl::StatusOr<RoundReport> RunRound(FederationState& state,
                                     RoundDriver& driver);

// Runs all remaining rounds, calling on_round after each.
absl::Status RunExperiment(
    FederationState& state, RoundDriver& driver,
    const std::function<void(const RoundReport&)>& on_round);

// Same model trained by plain gradient descent on the concatenation of all
// client datasets (ascending client id), rounds * local_epochs passes with
// the federated learning-rate schedule. Reports one entry per round.
absl::StatusOr<std::vector<RoundReport>> RunCentralized(
    const FederationSetup& setup, ParamVector* final_theta = nullptr);

}  // namespace fedmesh

#endif  // FEDMESH_FEDERATION_H_
