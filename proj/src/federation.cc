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

#include "fedmesh/federation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "absl/strings/str_cat.h"
#include "fedmesh/data.h"
#include "fedmesh/random.h"
#include "logging.h"

namespace fedmesh {

absl::Status ValidateSchedule(const TrainingSchedule& schedule) {
  if (schedule.rounds < 1) {
    return absl::InvalidArgumentError("rounds must be >= 1");
  }
  if (schedule.local_epochs < 1) {
    return absl::InvalidArgumentError("local_epochs must be >= 1");
  }
  if (schedule.batch_size.has_value() && *schedule.batch_size < 1) {
    return absl::InvalidArgumentError("batch_size must be >= 1");
  }
  if (!(schedule.learning_rate > 0.0) ||
      !std::isfinite(schedule.learning_rate)) {
    return absl::InvalidArgumentError("learning_rate must be positive");
  }
  if (!(schedule.lr_decay > 0.0 && schedule.lr_decay <= 1.0)) {
    return absl::InvalidArgumentError("lr_decay must lie in (0, 1]");
  }
  if (!(schedule.participation_fraction > 0.0 &&
        schedule.participation_fraction <= 1.0)) {
    return absl::InvalidArgumentError(
        "participation_fraction must lie in (0, 1]");
  }
  return absl::OkStatus();
}

double RoundLearningRate(const TrainingSchedule& schedule, uint32_t round) {
  double lr = schedule.learning_rate;
  for (uint32_t t = 1; t < round; ++t) lr *= schedule.lr_decay;
  return lr;
}

absl::StatusOr<std::map<uint32_t, double>> AggregationCoefficients(
    std::span<const Contributor> contributors,
    const AggregationPolicy& policy) {
  if (contributors.empty()) {
    return absl::FailedPreconditionError("no updates to aggregate");
  }
  std::vector<Contributor> sorted(contributors.begin(), contributors.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Contributor& a, const Contributor& b) {
              return a.client_id < b.client_id;
            });
  std::vector<double> raw;
  raw.reserve(sorted.size());
  for (const Contributor& c : sorted) {
    switch (policy.kind) {
      case PolicyKind::kUniform:
        raw.push_back(1.0);
        break;
      case PolicyKind::kSizeWeighted:
        if (c.sample_count < 1) {
          return absl::InvalidArgumentError(absl::StrCat(
              "client ", c.client_id, " reports no samples"));
        }
        raw.push_back(static_cast<double>(c.sample_count));
        break;
      case PolicyKind::kCustomWeighted: {
        auto it = policy.weights.find(c.client_id);
        if (it == policy.weights.end()) {
          return absl::InvalidArgumentError(absl::StrCat(
              "custom_weighted policy has no weight for client ",
              c.client_id));
        }
        if (!(it->second >= 0.0) || !std::isfinite(it->second)) {
          return absl::InvalidArgumentError(absl::StrCat(
              "weight of client ", c.client_id, " must be finite and >= 0"));
        }
        raw.push_back(it->second);
        break;
      }
    }
  }
  double total = 0.0;
  for (double w : raw) total += w;
  if (!(total > 0.0)) {
    return absl::InvalidArgumentError("aggregation weights sum to zero");
  }
  std::map<uint32_t, double> out;
  for (size_t i = 0; i < sorted.size(); ++i) {
    out[sorted[i].client_id] = raw[i] / total;
  }
  return out;
}

absl::StatusOr<ParamVector> Aggregate(std::span<const ClientUpdate> updates,
                                      const AggregationPolicy& policy,
                                      const ParamVector& theta_global) {
  std::vector<const ClientUpdate*> usable;
  for (const ClientUpdate& u : updates) {
    if (!u.flagged) usable.push_back(&u);
  }
  if (usable.empty()) {
    return absl::AbortedError("every update in the round was flagged");
  }
  std::sort(usable.begin(), usable.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });
  std::vector<Contributor> contributors;
  for (const ClientUpdate* u : usable) {
    if (u->params.size() != theta_global.size()) {
      return absl::InvalidArgumentError(absl::StrCat(
          "update from client ", u->client_id, " has dimension ",
          u->params.size(), ", expected ", theta_global.size()));
    }
    contributors.push_back({u->client_id, u->sample_count});
  }
  auto coefficients = AggregationCoefficients(contributors, policy);
  if (!coefficients.ok()) return coefficients.status();
  ParamVector next = coefficients->at(usable[0]->client_id) * usable[0]->params;
  for (size_t i = 1; i < usable.size(); ++i) {
    next += coefficients->at(usable[i]->client_id) * usable[i]->params;
  }
  return next;
}

std::map<uint32_t, double> DerivePrivacyWeights(
    std::span<const ClientState> clients, double epsilon_cap) {
  std::map<uint32_t, double> raw;
  double total = 0.0;
  for (const ClientState& c : clients) {
    const double eps =
        c.budget.enabled ? std::min(c.budget.epsilon, epsilon_cap)
                         : epsilon_cap;
    const double w = static_cast<double>(c.local_data.size()) *
                     std::max(eps, 0.0) / epsilon_cap;
    raw[c.client_id] = w;
  }
  for (const auto& [id, w] : raw) total += w;
  if (!(total > 0.0)) {
    spdlog::warn("privacy-derived weights are all zero; using uniform");
    for (auto& [id, w] : raw) w = 1.0 / static_cast<double>(raw.size());
    return raw;
  }
  for (auto& [id, w] : raw) w /= total;
  return raw;
}

std::vector<uint32_t> SampleParticipants(std::span<const uint32_t> client_ids,
                                         double fraction,
                                         uint64_t experiment_seed,
                                         uint32_t round) {
  std::vector<uint32_t> ids(client_ids.begin(), client_ids.end());
  std::sort(ids.begin(), ids.end());
  const double wanted = std::ceil(fraction * ids.size() - 1e-9);
  const size_t k = std::clamp<size_t>(static_cast<size_t>(wanted), 1,
                                      ids.size());
  if (k < ids.size()) {
    Rng rng(DeriveSeed(experiment_seed,
                       {static_cast<uint64_t>(SeedTag::kParticipants), round}));
    rng.Shuffle(ids);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

uint64_t BatchShuffleSeed(uint64_t experiment_seed, uint32_t client_id,
                          uint32_t round) {
  return DeriveSeed(experiment_seed,
                    {static_cast<uint64_t>(SeedTag::kBatchShuffle), client_id,
                     round});
}

bool DescendLocally(const ModelSpec& spec, ParamVector& theta,
                    const Dataset& data, const TrainingSchedule& schedule,
                    double learning_rate, uint64_t shuffle_seed) {
  const int64_t n = data.size();
  const bool full_batch =
      !schedule.batch_size.has_value() || *schedule.batch_size >= n;
  Rng rng(shuffle_seed);
  std::vector<int64_t> order(n);
  for (int epoch = 0; epoch < schedule.local_epochs; ++epoch) {
    if (full_batch) {
      theta -= learning_rate * internal::GradientUnchecked(spec, theta, data);
    } else {
      std::iota(order.begin(), order.end(), 0);
      rng.Shuffle(order);
      for (int64_t start = 0; start < n; start += *schedule.batch_size) {
        const int64_t len = std::min<int64_t>(*schedule.batch_size, n - start);
        const Dataset batch =
            Subset(data, std::span<const int64_t>(order).subspan(start, len));
        theta -=
            learning_rate * internal::GradientUnchecked(spec, theta, batch);
      }
    }
    if (!theta.allFinite()) return false;
  }
  return true;
}

absl::StatusOr<ClientUpdate> LocalTrain(const ClientState& client,
                                        const ParamVector& theta_global,
                                        const TrainingSchedule& schedule,
                                        const ModelSpec& spec, uint32_t round,
                                        double learning_rate,
                                        uint64_t experiment_seed) {
  if (absl::Status s = ValidateParams(spec, theta_global); !s.ok()) return s;
  if (absl::Status s = ValidateDataset(spec, client.local_data); !s.ok()) {
    return s;
  }
  ClientUpdate update;
  update.client_id = client.client_id;
  update.round = round;
  update.sample_count = client.local_data.size();
  update.local_loss_before =
      internal::LossUnchecked(spec, theta_global, client.local_data);

  ParamVector theta = theta_global;
  const bool finite = DescendLocally(
      spec, theta, client.local_data, schedule, learning_rate,
      BatchShuffleSeed(experiment_seed, client.client_id, round));
  update.local_loss_after =
      finite ? internal::LossUnchecked(spec, theta, client.local_data)
             : std::numeric_limits<double>::quiet_NaN();
  if (!finite || !std::isfinite(update.local_loss_after)) {
    spdlog::warn("client {} diverged in round {}", client.client_id, round);
    update.flagged = true;
    update.delta = ParamVector::Zero(theta_global.size());
    update.params = theta_global;
    return update;
  }

  const ParamVector raw_delta = theta - theta_global;
  auto released = Privatize(raw_delta, client.budget,
                            NoiseSeed(experiment_seed, client.client_id, round));
  if (!released.ok()) return released.status();
  update.receipt = released->receipt;
  if (client.budget.enabled) {
    update.delta = std::move(released->values);
    update.params = theta_global + update.delta;
  } else {
    update.delta = raw_delta;
    update.params = std::move(theta);
  }
  return update;
}

absl::Status ValidateSetup(const FederationSetup& setup) {
  if (absl::Status s = ValidateSpec(setup.spec); !s.ok()) return s;
  if (absl::Status s = ValidateSchedule(setup.schedule); !s.ok()) return s;
  if (setup.clients.empty()) {
    return absl::InvalidArgumentError("federation has no clients");
  }
  std::set<uint32_t> ids;
  for (const ClientState& c : setup.clients) {
    if (!ids.insert(c.client_id).second) {
      return absl::InvalidArgumentError(
          absl::StrCat("duplicate client id ", c.client_id));
    }
    if (absl::Status s = ValidateDataset(setup.spec, c.local_data); !s.ok()) {
      return absl::InvalidArgumentError(
          absl::StrCat("client ", c.client_id, ": ", s.message()));
    }
    if (c.budget.enabled) {
      if (absl::Status s = ValidateBudget(c.budget); !s.ok()) {
        return absl::InvalidArgumentError(
            absl::StrCat("client ", c.client_id, ": ", s.message()));
      }
    }
    if (c.weight_override.has_value() &&
        (!(*c.weight_override >= 0.0) || !std::isfinite(*c.weight_override))) {
      return absl::InvalidArgumentError(absl::StrCat(
          "client ", c.client_id, ": weight must be finite and >= 0"));
    }
  }
  if (!std::is_sorted(setup.clients.begin(), setup.clients.end(),
                      [](const ClientState& a, const ClientState& b) {
                        return a.client_id < b.client_id;
                      })) {
    return absl::InvalidArgumentError("clients must be sorted by id");
  }
  for (const EvalSplit& split : setup.domain_tests) {
    if (absl::Status s = ValidateDataset(setup.spec, split.data); !s.ok()) {
      return absl::InvalidArgumentError(
          absl::StrCat("test split '", split.domain, "': ", s.message()));
    }
  }
  if (absl::Status s = ValidateDataset(setup.spec, setup.pooled_test);
      !s.ok()) {
    return absl::InvalidArgumentError(
        absl::StrCat("pooled test set: ", s.message()));
  }
  for (int i : setup.tracked_indices) {
    if (i < 0 || i >= ParamDim(setup.spec)) {
      return absl::OutOfRangeError(
          absl::StrCat("tracked parameter index ", i, " out of range"));
    }
  }
  if (setup.fixed_point_bits < 0 || setup.fixed_point_bits > 32) {
    return absl::InvalidArgumentError("fixed_point_bits must lie in [0, 32]");
  }
  if (setup.policy.kind == PolicyKind::kCustomWeighted) {
    const AggregationPolicy policy = EffectivePolicy(setup);
    for (const ClientState& c : setup.clients) {
      if (!policy.weights.contains(c.client_id)) {
        return absl::InvalidArgumentError(absl::StrCat(
            "custom_weighted policy has no weight for client ", c.client_id));
      }
    }
  }
  return absl::OkStatus();
}

AggregationPolicy EffectivePolicy(const FederationSetup& setup) {
  AggregationPolicy policy = setup.policy;
  for (const ClientState& c : setup.clients) {
    if (c.weight_override.has_value()) {
      policy.weights[c.client_id] = *c.weight_override;
    }
  }
  return policy;
}

absl::StatusOr<Contribution> ClientRound(const ClientState& client,
                                         const RoundPlan& plan,
                                         const ModelSpec& spec,
                                         const TrainingSchedule& schedule,
                                         uint64_t experiment_seed,
                                         int fixed_point_bits) {
  auto update = LocalTrain(client, plan.global, schedule, spec, plan.round,
                           plan.learning_rate, experiment_seed);
  if (!update.ok()) return update.status();
  Contribution out;
  if (!plan.secure || update->flagged) {
    out.update = std::move(*update);
    if (plan.secure) {
      out.update.params.resize(0);
      out.update.delta.resize(0);
    }
    return out;
  }
  auto coefficient = plan.coefficients.find(client.client_id);
  if (coefficient == plan.coefficients.end()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "round plan carries no coefficient for client ", client.client_id));
  }
  const FixedPointCodec codec(fixed_point_bits);
  auto encoded = codec.Encode(coefficient->second * update->params);
  if (!encoded.ok()) return encoded.status();
  const PairwiseSeedMatrix seeds =
      PairwiseSeedMatrix::Derive(experiment_seed, plan.participants);
  auto share = Mask(*encoded, client.client_id, plan.participants, seeds,
                    plan.round);
  if (!share.ok()) return share.status();
  out.update = std::move(*update);
  out.update.params.resize(0);
  out.update.delta.resize(0);
  out.share = std::move(*share);
  return out;
}

absl::StatusOr<std::vector<Contribution>> InProcessDriver::Collect(
    const RoundPlan& plan) {
  std::vector<Contribution> out;
  for (uint32_t id : plan.participants) {
    auto it = std::find_if(
        setup_.clients.begin(), setup_.clients.end(),
        [id](const ClientState& c) { return c.client_id == id; });
    if (it == setup_.clients.end()) {
      return absl::NotFoundError(absl::StrCat("unknown client ", id));
    }
    auto contribution = ClientRound(*it, plan, setup_.spec, setup_.schedule,
                                    setup_.seed, setup_.fixed_point_bits);
    if (!contribution.ok()) return contribution.status();
    out.push_back(std::move(*contribution));
  }
  return out;
}

FederationState InitialState(FederationSetup setup) {
  FederationState state;
  state.theta = ParamVector::Zero(ParamDim(setup.spec));
  state.setup = std::move(setup);
  return state;
}

absl::Status EvaluateInto(const FederationSetup& setup,
                          const ParamVector& theta, RoundReport& report) {
  report.domain_losses.clear();
  for (const EvalSplit& split : setup.domain_tests) {
    auto loss = Loss(setup.spec, theta, split.data);
    if (!loss.ok()) return loss.status();
    report.domain_losses.push_back({split.domain, *loss});
  }
  auto cm = Confusion(setup.spec, theta, setup.pooled_test);
  if (!cm.ok()) return cm.status();
  auto metrics = Metrics(*cm, setup.averaging);
  if (!metrics.ok()) return metrics.status();
  report.metrics = *metrics;
  auto trace = TraceParameters(theta, setup.tracked_indices);
  if (!trace.ok()) return trace.status();
  report.global_trace = std::move(*trace);
  return absl::OkStatus();
}

namespace {

struct RoundOutcome {
  ParamVector theta;
  std::vector<Contribution> contributions;
  std::map<uint32_t, double> coefficients;
};

absl::StatusOr<RoundOutcome> AttemptRound(const FederationState& state,
                                          RoundDriver& driver,
                                          const RoundPlan& plan,
                                          const AggregationPolicy& policy) {
  RoundOutcome outcome;
  auto contributions = driver.Collect(plan);
  if (!contributions.ok()) return contributions.status();
  outcome.contributions = std::move(*contributions);
  std::sort(outcome.contributions.begin(), outcome.contributions.end(),
            [](const Contribution& a, const Contribution& b) {
              return a.update.client_id < b.update.client_id;
            });
  std::vector<uint32_t> got;
  for (const Contribution& c : outcome.contributions) {
    if (c.update.round != plan.round) {
      return absl::AbortedError(absl::StrCat("client ", c.update.client_id,
                                             " answered for round ",
                                             c.update.round));
    }
    got.push_back(c.update.client_id);
  }
  if (got != plan.participants) {
    return absl::AbortedError(
        absl::StrCat("round ", plan.round, ": expected ",
                     plan.participants.size(), " distinct participants, got ",
                     got.size()));
  }

  if (plan.secure) {
    std::vector<MaskedShare> shares;
    for (const Contribution& c : outcome.contributions) {
      if (c.update.flagged || !c.share.has_value()) {
        return absl::AbortedError(
            absl::StrCat("client ", c.update.client_id,
                         " diverged; a masked sum cannot exclude it"));
      }
      shares.push_back(*c.share);
    }
    auto sum = UnmaskSum(shares, plan.participants, plan.round,
                         FixedPointCodec(state.setup.fixed_point_bits));
    if (!sum.ok()) return sum.status();
    outcome.theta = std::move(*sum);
    outcome.coefficients = plan.coefficients;
  } else {
    std::vector<ClientUpdate> updates;
    std::vector<Contributor> contributors;
    for (const Contribution& c : outcome.contributions) {
      updates.push_back(c.update);
      if (!c.update.flagged) {
        contributors.push_back({c.update.client_id, c.update.sample_count});
      }
    }
    auto theta = Aggregate(updates, policy, plan.global);
    if (!theta.ok()) return theta.status();
    outcome.theta = std::move(*theta);
    auto coefficients = AggregationCoefficients(contributors, policy);
    if (!coefficients.ok()) return coefficients.status();
    outcome.coefficients = std::move(*coefficients);
  }
  if (outcome.theta.size() != plan.global.size() ||
      !outcome.theta.allFinite()) {
    return absl::AbortedError(
        absl::StrCat("round ", plan.round, " produced a non-finite model"));
  }
  return outcome;
}

}  // namespace

absl::StatusOr<RoundReport> RunRound(FederationState& state,
                                     RoundDriver& driver) {
  const FederationSetup& setup = state.setup;
  const AggregationPolicy policy = EffectivePolicy(setup);
  RoundPlan plan;
  plan.round = state.next_round;
  plan.learning_rate = RoundLearningRate(setup.schedule, plan.round);
  plan.global = state.theta;
  plan.secure = setup.secure_aggregation;
  std::vector<uint32_t> ids;
  for (const ClientState& c : setup.clients) ids.push_back(c.client_id);
  plan.participants = SampleParticipants(
      ids, setup.schedule.participation_fraction, setup.seed, plan.round);
  if (plan.secure) {
    std::vector<Contributor> contributors;
    for (const ClientState& c : setup.clients) {
      if (std::binary_search(plan.participants.begin(),
                             plan.participants.end(), c.client_id)) {
        contributors.push_back({c.client_id, c.local_data.size()});
      }
    }
    auto coefficients = AggregationCoefficients(contributors, policy);
    if (!coefficients.ok()) return coefficients.status();
    plan.coefficients = std::move(*coefficients);
  }

  absl::StatusOr<RoundOutcome> outcome = AttemptRound(state, driver, plan,
                                                      policy);
  if (!outcome.ok() && absl::IsAborted(outcome.status())) {
    spdlog::warn("round {} aborted ({}); retrying once", plan.round,
                 outcome.status().message());
    outcome = AttemptRound(state, driver, plan, policy);
  }
  if (!outcome.ok()) {
    return absl::Status(outcome.status().code(),
                        absl::StrCat("round ", plan.round, " failed: ",
                                     outcome.status().message()));
  }

  RoundReport report;
  report.round = plan.round;
  report.learning_rate = plan.learning_rate;
  if (absl::Status s = EvaluateInto(setup, outcome->theta, report); !s.ok()) {
    return s;
  }

  std::map<std::string, std::pair<int, std::vector<double>>> domain_sums;
  for (const ClientState& c : setup.clients) {
    ClientRecord record;
    record.client_id = c.client_id;
    record.domain = c.domain_tag;
    record.budget = c.budget;
    record.sample_count = c.local_data.size();
    auto it = std::find_if(outcome->contributions.begin(),
                           outcome->contributions.end(),
                           [&](const Contribution& x) {
                             return x.update.client_id == c.client_id;
                           });
    if (it != outcome->contributions.end()) {
      const ClientUpdate& u = it->update;
      record.participated = true;
      record.flagged = u.flagged;
      record.sample_count = u.sample_count;
      record.loss_before = u.local_loss_before;
      record.loss_after = u.local_loss_after;
      record.receipt = u.receipt;
      auto coefficient = outcome->coefficients.find(c.client_id);
      record.coefficient = coefficient == outcome->coefficients.end()
                               ? 0.0
                               : coefficient->second;
      if (!plan.secure && !u.flagged) {
        auto trace = TraceParameters(u.params, setup.tracked_indices);
        if (!trace.ok()) return trace.status();
        auto& [count, sums] = domain_sums[c.domain_tag];
        if (sums.empty()) sums.assign(trace->size(), 0.0);
        for (size_t k = 0; k < trace->size(); ++k) sums[k] += (*trace)[k];
        ++count;
      }
    }
    report.clients.push_back(std::move(record));
  }
  for (const EvalSplit& split : setup.domain_tests) {
    auto it = domain_sums.find(split.domain);
    if (it == domain_sums.end()) continue;
    DomainTrace trace{split.domain, it->second.second};
    for (double& v : trace.values) v /= it->second.first;
    report.domain_traces.push_back(std::move(trace));
  }

  state.theta = std::move(outcome->theta);
  ++state.next_round;
  return report;
}

absl::Status RunExperiment(
    FederationState& state, RoundDriver& driver,
    const std::function<void(const RoundReport&)>& on_round) {
  if (absl::Status s = ValidateSetup(state.setup); !s.ok()) return s;
  while (state.next_round <= static_cast<uint32_t>(state.setup.schedule.rounds)) {
    auto report = RunRound(state, driver);
    if (!report.ok()) return report.status();
    if (on_round) on_round(*report);
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<RoundReport>> RunCentralized(
    const FederationSetup& setup, ParamVector* final_theta) {
  if (absl::Status s = ValidateSetup(setup); !s.ok()) return s;
  std::vector<Dataset> shards;
  for (const ClientState& c : setup.clients) shards.push_back(c.local_data);
  const Dataset pooled = Concatenate(shards);
  // The pooled learner reuses the first client's shuffle stream so that a
  // single-client federation and the baseline see the same batches.
  const uint32_t stream_id = setup.clients.front().client_id;
  ParamVector theta = ParamVector::Zero(ParamDim(setup.spec));
  std::vector<RoundReport> reports;
  for (uint32_t round = 1;
       round <= static_cast<uint32_t>(setup.schedule.rounds); ++round) {
    const double lr = RoundLearningRate(setup.schedule, round);
    if (!DescendLocally(setup.spec, theta, pooled, setup.schedule, lr,
                        BatchShuffleSeed(setup.seed, stream_id, round))) {
      return absl::AbortedError(
          absl::StrCat("centralized baseline diverged in round ", round));
    }
    RoundReport report;
    report.round = round;
    report.learning_rate = lr;
    if (absl::Status s = EvaluateInto(setup, theta, report); !s.ok()) return s;
    reports.push_back(std::move(report));
  }
  if (final_theta != nullptr) *final_theta = theta;
  return reports;
}

}  // namespace fedmesh
