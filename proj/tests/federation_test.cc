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
#include <cstring>
#include <random>

#include "fixtures.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace fedmesh {
namespace {

using testing::FixtureOptions;
using testing::MakeSetup;
using testing::RandomVector;

bool BitwiseEqual(const ParamVector& a, const ParamVector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

TEST(FederationTest, LearningRateDecaysGeometrically) {
  TrainingSchedule s;
  s.learning_rate = 0.5;
  s.lr_decay = 0.9;
  EXPECT_EQ(RoundLearningRate(s, 1), 0.5);
  EXPECT_EQ(RoundLearningRate(s, 2), 0.5 * 0.9);
  EXPECT_EQ(RoundLearningRate(s, 3), 0.5 * 0.9 * 0.9);
  EXPECT_NEAR(RoundLearningRate(s, 50), 0.5 * std::pow(0.9, 49), 1e-15);
}

TEST(FederationTest, ScheduleValidation) {
  TrainingSchedule s;
  EXPECT_TRUE(ValidateSchedule(s).ok());
  s.lr_decay = 1.5;
  EXPECT_FALSE(ValidateSchedule(s).ok());
  s = {};
  s.participation_fraction = 0.0;
  EXPECT_FALSE(ValidateSchedule(s).ok());
  s = {};
  s.batch_size = 0;
  EXPECT_FALSE(ValidateSchedule(s).ok());
}

TEST(FederationTest, CoefficientsFollowEachPolicy) {
  std::vector<Contributor> c = {{2, 300}, {0, 100}, {1, 100}};
  auto uniform = AggregationCoefficients(c, {PolicyKind::kUniform, {}});
  EXPECT_NEAR(uniform->at(0), 1.0 / 3.0, 1e-15);
  auto sized = AggregationCoefficients(c, {PolicyKind::kSizeWeighted, {}});
  EXPECT_EQ(sized->at(2), 0.6);
  EXPECT_EQ(sized->at(0), 0.2);
  auto custom = AggregationCoefficients(
      c, {PolicyKind::kCustomWeighted, {{0, 1.0}, {1, 3.0}, {2, 0.0}}});
  EXPECT_EQ(custom->at(1), 0.75);
  EXPECT_EQ(custom->at(2), 0.0);
  EXPECT_FALSE(
      AggregationCoefficients(c, {PolicyKind::kCustomWeighted, {{0, 1.0}}})
          .ok());
  EXPECT_FALSE(AggregationCoefficients(
                   c, {PolicyKind::kCustomWeighted, {{0, 0}, {1, 0}, {2, 0}}})
                   .ok());
  EXPECT_FALSE(AggregationCoefficients({}, {PolicyKind::kUniform, {}}).ok());
}

TEST(FederationTest, CoefficientsAreConvexForEverySubset) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int64_t> size(1, 1000);
  std::uniform_real_distribution<double> weight(0.0, 5.0);
  for (int n = 1; n <= 6; ++n) {
    std::vector<Contributor> all;
    AggregationPolicy custom{PolicyKind::kCustomWeighted, {}};
    for (int i = 0; i < n; ++i) {
      all.push_back({static_cast<uint32_t>(i), size(gen)});
      custom.weights[i] = weight(gen);
    }
    for (uint32_t mask = 1; mask < (1u << n); ++mask) {
      std::vector<Contributor> subset;
      for (int i = 0; i < n; ++i) {
        if (mask & (1u << i)) subset.push_back(all[i]);
      }
      for (const AggregationPolicy& policy :
           {AggregationPolicy{PolicyKind::kUniform, {}},
            AggregationPolicy{PolicyKind::kSizeWeighted, {}}, custom}) {
        auto a = AggregationCoefficients(subset, policy);
        ASSERT_TRUE(a.ok());
        ASSERT_EQ(a->size(), subset.size());
        double sum = 0.0;
        for (const auto& [id, v] : *a) {
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(FederationTest, ScalingCustomWeightsKeepsCoefficients) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> weight(0.1, 5.0), scale(1e-3, 1e3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Contributor> c;
    AggregationPolicy p{PolicyKind::kCustomWeighted, {}};
    for (uint32_t i = 0; i < 5; ++i) {
      c.push_back({i, 10});
      p.weights[i] = weight(gen);
    }
    const double k = scale(gen);
    AggregationPolicy scaled = p, doubled = p;
    for (auto& [id, w] : scaled.weights) w *= k;
    for (auto& [id, w] : doubled.weights) w *= 2.0;
    auto a = *AggregationCoefficients(c, p);
    auto b = *AggregationCoefficients(c, scaled);
    for (const auto& [id, v] : a) EXPECT_NEAR(b.at(id), v, 1e-15);
    // Powers of two scale exactly.
    EXPECT_EQ(*AggregationCoefficients(c, doubled), a);
  }
}

TEST(FederationTest, AggregateIsOrderIndependentBitwise) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClientUpdate> updates;
    for (uint32_t i = 0; i < 5; ++i) {
      ClientUpdate u;
      u.client_id = i;
      u.sample_count = 10 + gen() % 100;
      u.params = RandomVector(gen, 9);
      updates.push_back(u);
    }
    const ParamVector global = ParamVector::Zero(9);
    for (PolicyKind kind : {PolicyKind::kUniform, PolicyKind::kSizeWeighted}) {
      auto base = Aggregate(updates, {kind, {}}, global);
      ASSERT_TRUE(base.ok());
      std::vector<ClientUpdate> shuffled = updates;
      std::shuffle(shuffled.begin(), shuffled.end(), gen);
      EXPECT_TRUE(BitwiseEqual(*Aggregate(shuffled, {kind, {}}, global), *base));
    }
  }
}

TEST(FederationTest, AggregateMatchesWeightedSumAndSkipsFlagged) {
  ClientUpdate a, b, c;
  a.client_id = 0;
  a.sample_count = 1;
  a.params = Eigen::Vector2d(1.0, 2.0);
  b.client_id = 1;
  b.sample_count = 3;
  b.params = Eigen::Vector2d(5.0, -2.0);
  c.client_id = 2;
  c.sample_count = 100;
  c.params = Eigen::Vector2d(1e9, 1e9);
  c.flagged = true;
  std::vector<ClientUpdate> updates = {a, b, c};
  auto theta = Aggregate(updates, {PolicyKind::kSizeWeighted, {}},
                         Eigen::Vector2d::Zero());
  ASSERT_TRUE(theta.ok());
  EXPECT_DOUBLE_EQ((*theta)[0], 0.25 * 1.0 + 0.75 * 5.0);
  EXPECT_DOUBLE_EQ((*theta)[1], 0.25 * 2.0 - 0.75 * 2.0);
  std::vector<ClientUpdate> only_flagged = {c};
  EXPECT_EQ(Aggregate(only_flagged, {PolicyKind::kUniform, {}},
                      Eigen::Vector2d::Zero())
                .status()
                .code(),
            absl::StatusCode::kAborted);
}

TEST(FederationTest, PrivacyDerivedWeights) {
  std::vector<ClientState> clients(3);
  for (uint32_t i = 0; i < 3; ++i) {
    clients[i].client_id = i;
    clients[i].local_data.features.resize(100, 1);
  }
  clients[0].budget = {1.0, 1e-5, 1.0, true};
  clients[1].budget = {8.0, 1e-5, 1.0, true};
  // Client 2 has privacy disabled and counts as the cap.
  auto w = DerivePrivacyWeights(clients, 8.0);
  EXPECT_NEAR(w.at(0), 1.0 / 17.0, 1e-15);
  EXPECT_NEAR(w.at(1), 8.0 / 17.0, 1e-15);
  EXPECT_NEAR(w.at(2), 8.0 / 17.0, 1e-15);
  clients[1].budget.epsilon = 50.0;
  EXPECT_NEAR(DerivePrivacyWeights(clients, 8.0).at(1), 8.0 / 17.0, 1e-15);
}

TEST(FederationTest, ParticipantSampling) {
  std::vector<uint32_t> ids = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (double f : {0.1, 0.25, 0.5, 0.99, 1.0}) {
    for (uint32_t round = 1; round < 20; ++round) {
      auto p = SampleParticipants(ids, f, 7, round);
      EXPECT_EQ(p.size(), static_cast<size_t>(std::ceil(f * 10 - 1e-9)));
      EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
      EXPECT_EQ(std::adjacent_find(p.begin(), p.end()), p.end());
      EXPECT_EQ(p, SampleParticipants(ids, f, 7, round));
    }
  }
  EXPECT_EQ(SampleParticipants(ids, 1.0, 7, 1), ids);
  EXPECT_NE(SampleParticipants(ids, 0.3, 7, 1),
            SampleParticipants(ids, 0.3, 7, 2));
}

TEST(FederationTest, LocalTrainReducesLossAndReleasesParams) {
  FederationSetup setup = MakeSetup({});
  const ClientState& client = setup.clients[0];
  ParamVector global = ParamVector::Zero(ParamDim(setup.spec));
  auto u = LocalTrain(client, global, setup.schedule, setup.spec, 1, 0.1, 5);
  ASSERT_TRUE(u.ok());
  EXPECT_LT(u->local_loss_after, u->local_loss_before);
  EXPECT_FALSE(u->flagged);
  EXPECT_TRUE(BitwiseEqual(u->delta, ParamVector(u->params - global)));
  EXPECT_EQ(u->sample_count, client.local_data.size());
}

TEST(FederationTest, MiniBatchTrainingIsDeterministic) {
  FederationSetup setup = MakeSetup({});
  setup.schedule.batch_size = 16;
  ParamVector global = ParamVector::Zero(ParamDim(setup.spec));
  auto a = LocalTrain(setup.clients[1], global, setup.schedule, setup.spec, 3,
                      0.1, 5);
  auto b = LocalTrain(setup.clients[1], global, setup.schedule, setup.spec, 3,
                      0.1, 5);
  auto c = LocalTrain(setup.clients[1], global, setup.schedule, setup.spec, 4,
                      0.1, 5);
  EXPECT_TRUE(BitwiseEqual(a->params, b->params));
  EXPECT_FALSE(BitwiseEqual(a->params, c->params));
}

TEST(FederationTest, DivergedClientIsFlagged) {
  FederationSetup setup = MakeSetup({});
  ClientState wild = setup.clients[0];
  wild.local_data.features *= 1e300;
  auto u = LocalTrain(wild, ParamVector::Zero(ParamDim(setup.spec)),
                      setup.schedule, setup.spec, 1, 1e10, 5);
  ASSERT_TRUE(u.ok());
  EXPECT_TRUE(u->flagged);
}

TEST(FederationTest, OneClientFederationEqualsCentralizedDescent) {
  for (bool minibatch : {false, true}) {
    FederationSetup setup = MakeSetup({.clients = 1, .rounds = 50});
    if (minibatch) setup.schedule.batch_size = 32;
    ParamVector central;
    auto baseline = RunCentralized(setup, &central);
    ASSERT_TRUE(baseline.ok());
    FederationState state = InitialState(setup);
    InProcessDriver driver(state.setup);
    std::vector<RoundReport> reports;
    ASSERT_TRUE(RunExperiment(state, driver, [&](const RoundReport& r) {
                  reports.push_back(r);
                }).ok());
    EXPECT_TRUE(BitwiseEqual(state.theta, central));
    ASSERT_EQ(reports.size(), baseline->size());
    for (size_t t = 0; t < reports.size(); ++t) {
      EXPECT_EQ(reports[t].metrics, (*baseline)[t].metrics);
      EXPECT_EQ(reports[t].global_trace, (*baseline)[t].global_trace);
    }
  }
}

TEST(FederationTest, SecureAggregationMatchesPlainWithinQuantization) {
  FederationSetup plain = MakeSetup({.clients = 4, .rounds = 1});
  FederationSetup secure = plain;
  secure.secure_aggregation = true;
  FederationState a = InitialState(plain), b = InitialState(secure);
  InProcessDriver da(a.setup), db(b.setup);
  auto ra = RunRound(a, da);
  auto rb = RunRound(b, db);
  ASSERT_TRUE(ra.ok() && rb.ok()) << rb.status();
  for (Eigen::Index i = 0; i < a.theta.size(); ++i) {
    EXPECT_NEAR(a.theta[i], b.theta[i], 4 * std::ldexp(1.0, -23));
  }
  // Secure rounds do not expose per-client parameters.
  EXPECT_TRUE(rb->domain_traces.empty());
  EXPECT_FALSE(ra->domain_traces.empty());
}

TEST(FederationTest, DivergenceAbortsSecureRoundsButNotPlainOnes) {
  for (bool secure : {false, true}) {
    FederationSetup setup = MakeSetup({.clients = 3, .rounds = 2, .secure = secure});
    setup.clients[1].local_data.features *= 1e300;
    FederationState state = InitialState(setup);
    InProcessDriver driver(state.setup);
    auto report = RunRound(state, driver);
    if (secure) {
      EXPECT_EQ(report.status().code(), absl::StatusCode::kAborted);
      EXPECT_EQ(state.next_round, 1u);
    } else {
      ASSERT_TRUE(report.ok()) << report.status();
      EXPECT_TRUE(report->clients[1].flagged);
      EXPECT_EQ(report->clients[1].coefficient, 0.0);
    }
  }
}

TEST(FederationTest, RoundReportDescribesEveryClient) {
  FederationSetup setup = MakeSetup({.clients = 5, .rounds = 1});
  setup.schedule.participation_fraction = 0.4;
  for (ClientState& c : setup.clients) c.budget = {2.0, 1e-5, 1.0, true};
  FederationState state = InitialState(setup);
  InProcessDriver driver(state.setup);
  auto report = RunRound(state, driver);
  ASSERT_TRUE(report.ok());
  ASSERT_EQ(report->clients.size(), 5u);
  int participated = 0;
  double coefficient_sum = 0.0;
  for (const ClientRecord& c : report->clients) {
    if (!c.participated) continue;
    ++participated;
    coefficient_sum += c.coefficient;
    EXPECT_EQ(c.receipt.mechanism, NoiseMechanism::kGaussian);
    EXPECT_GT(c.receipt.sigma, 0.0);
  }
  EXPECT_EQ(participated, 2);
  EXPECT_NEAR(coefficient_sum, 1.0, 1e-12);
  EXPECT_EQ(report->domain_losses.size(), 3u);
  EXPECT_EQ(report->global_trace.size(), 2u);
}

TEST(FederationTest, SetupValidation) {
  FederationSetup setup = MakeSetup({});
  EXPECT_TRUE(ValidateSetup(setup).ok());
  FederationSetup dup = setup;
  dup.clients[1].client_id = 0;
  EXPECT_FALSE(ValidateSetup(dup).ok());
  FederationSetup empty = setup;
  empty.clients.clear();
  EXPECT_FALSE(ValidateSetup(empty).ok());
  FederationSetup tracked = setup;
  tracked.tracked_indices = {99};
  EXPECT_FALSE(ValidateSetup(tracked).ok());
  FederationSetup custom = setup;
  custom.policy = {PolicyKind::kCustomWeighted, {{0, 1.0}}};
  EXPECT_FALSE(ValidateSetup(custom).ok());
  custom.clients[1].weight_override = 2.0;
  custom.clients[2].weight_override = 2.0;
  EXPECT_TRUE(ValidateSetup(custom).ok());
}

}  // namespace
}  // namespace fedmesh
