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

// Norm clipping and the Gaussian mechanism for released model updates.
//
// An update is clipped to L2 norm C and perturbed with N(0, sigma^2) noise
// per coordinate, sigma = C * sqrt(2 ln(1.25 / delta)) / epsilon. The L2
// sensitivity is taken to be C (one client's clipped update is replaced),
// not 2C. The classic calibration is only proven for epsilon <= 1; larger
// values are accepted with a warning. Budgets are per round: there is no
// composition accounting across rounds.

#ifndef FEDMESH_PRIVACY_H_
#define FEDMESH_PRIVACY_H_

#include <cstdint>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/model.h"

namespace fedmesh {

struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip_norm = 1.0;
  bool enabled = false;

  friend bool operator==(const PrivacyBudget&,
                         const PrivacyBudget&) = default;
};

enum class NoiseMechanism : uint8_t { kNone = 0, kGaussian = 1 };

// Record of what was done to one released update.
struct NoiseReceipt {
  double sigma = 0.0;
  bool clip_applied = false;
  double pre_clip_norm = 0.0;
  NoiseMechanism mechanism = NoiseMechanism::kNone;

  friend bool operator==(const NoiseReceipt&, const NoiseReceipt&) = default;
};

struct PrivatizedVector {
  ParamVector values;
  NoiseReceipt receipt;
};

absl::Status ValidateBudget(const PrivacyBudget& budget);

// Returns v unchanged when ||v|| <= C, otherwise v scaled onto the ball of
// radius C. The result never has a computed norm above C.
absl::StatusOr<PrivatizedVector> Clip(const ParamVector& v, double clip_norm);

absl::StatusOr<double> CalibrateSigma(const PrivacyBudget& budget);

// Adds independent N(0, sigma^2) to each coordinate from a stream seeded by
// seed. sigma == 0 returns v bit for bit.
absl::StatusOr<PrivatizedVector> AddNoise(const ParamVector& v, double sigma,
                                          uint64_t seed);

// Clip, calibrate and add noise; the exact identity when the budget is
// disabled.
absl::StatusOr<PrivatizedVector> Privatize(const ParamVector& update,
                                           const PrivacyBudget& budget,
                                           uint64_t seed);

// Noise stream for one client in one round.
uint64_t NoiseSeed(uint64_t experiment_seed, uint32_t client_id,
                   uint32_t round);

}  // namespace fedmesh

#endif  // FEDMESH_PRIVACY_H_
