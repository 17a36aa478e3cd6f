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

#include "fedmesh/privacy.h"

#include <atomic>
#include <cmath>

#include "absl/strings/str_cat.h"
#include "fedmesh/random.h"
#include "logging.h"

namespace fedmesh {

absl::Status ValidateBudget(const PrivacyBudget& budget) {
  if (!(budget.epsilon > 0.0) || !std::isfinite(budget.epsilon)) {
    return absl::InvalidArgumentError(
        absl::StrCat("epsilon must be positive, got ", budget.epsilon));
  }
  if (!(budget.delta > 0.0 && budget.delta < 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("delta must lie in (0, 1), got ", budget.delta));
  }
  if (!(budget.clip_norm > 0.0) || !std::isfinite(budget.clip_norm)) {
    return absl::InvalidArgumentError(
        absl::StrCat("clip_norm must be positive, got ", budget.clip_norm));
  }
  return absl::OkStatus();
}

absl::StatusOr<PrivatizedVector> Clip(const ParamVector& v, double clip_norm) {
  if (!(clip_norm > 0.0)) {
    return absl::InvalidArgumentError("clip_norm must be positive");
  }
  if (!v.allFinite()) {
    return absl::InvalidArgumentError("cannot clip a non-finite vector");
  }
  PrivatizedVector out;
  const double norm = v.norm();
  out.receipt.pre_clip_norm = norm;
  if (norm <= clip_norm) {
    out.values = v;
    return out;
  }
  out.receipt.clip_applied = true;
  double scale = clip_norm / norm;
  out.values = v * scale;
  while (out.values.norm() > clip_norm) {
    scale = std::nextafter(scale, 0.0);
    out.values = v * scale;
  }
  return out;
}

absl::StatusOr<double> CalibrateSigma(const PrivacyBudget& budget) {
  if (absl::Status s = ValidateBudget(budget); !s.ok()) return s;
  if (budget.epsilon > 1.0) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      spdlog::warn(
          "epsilon = {} > 1: the Gaussian calibration is outside its proven "
          "range",
          budget.epsilon);
    }
  }
  return budget.clip_norm * std::sqrt(2.0 * std::log(1.25 / budget.delta)) /
         budget.epsilon;
}

absl::StatusOr<PrivatizedVector> AddNoise(const ParamVector& v, double sigma,
                                          uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    return absl::InvalidArgumentError("sigma must be finite and >= 0");
  }
  if (!v.allFinite()) {
    return absl::InvalidArgumentError("cannot add noise to a non-finite vector");
  }
  PrivatizedVector out;
  out.values = v;
  out.receipt.pre_clip_norm = v.norm();
  if (sigma == 0.0) return out;
  out.receipt.sigma = sigma;
  out.receipt.mechanism = NoiseMechanism::kGaussian;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    out.values(i) += sigma * rng.Normal();
  }
  return out;
}

absl::StatusOr<PrivatizedVector> Privatize(const ParamVector& update,
                                           const PrivacyBudget& budget,
                                           uint64_t seed) {
  if (!budget.enabled) {
    if (!update.allFinite()) {
      return absl::InvalidArgumentError("update is not finite");
    }
    PrivatizedVector out;
    out.values = update;
    out.receipt.pre_clip_norm = update.norm();
    return out;
  }
  auto sigma = CalibrateSigma(budget);
  if (!sigma.ok()) return sigma.status();
  auto clipped = Clip(update, budget.clip_norm);
  if (!clipped.ok()) return clipped.status();
  auto noised = AddNoise(clipped->values, *sigma, seed);
  if (!noised.ok()) return noised.status();
  noised->receipt.clip_applied = clipped->receipt.clip_applied;
  noised->receipt.pre_clip_norm = clipped->receipt.pre_clip_norm;
  return noised;
}

uint64_t NoiseSeed(uint64_t experiment_seed, uint32_t client_id,
                   uint32_t round) {
  return DeriveSeed(experiment_seed,
                    {static_cast<uint64_t>(SeedTag::kNoise), client_id, round});
}

}  // namespace fedmesh
