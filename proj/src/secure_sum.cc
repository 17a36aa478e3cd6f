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

#include "fedmesh/secure_sum.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "absl/strings/str_cat.h"
#include "fedmesh/random.h"

namespace fedmesh {

FixedPointCodec::FixedPointCodec(int scale_bits)
    : scale_bits_(scale_bits), scale_(std::ldexp(1.0, scale_bits)) {}

absl::StatusOr<std::vector<uint64_t>> FixedPointCodec::Encode(
    const ParamVector& v) const {
  if (scale_bits_ < 0 || scale_bits_ > 32) {
    return absl::InvalidArgumentError(
        absl::StrCat("scale_bits must lie in [0, 32], got ", scale_bits_));
  }
  std::vector<uint64_t> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(std::abs(v(i)) < kMaxMagnitude)) {
      return absl::OutOfRangeError(absl::StrCat(
          "value ", v(i), " at coordinate ", i, " is not encodable"));
    }
    const int64_t fixed = std::llround(v(i) * scale_);
    out[i] = static_cast<uint64_t>(fixed);
  }
  return out;
}

ParamVector FixedPointCodec::Decode(std::span<const uint64_t> words) const {
  ParamVector out(static_cast<Eigen::Index>(words.size()));
  for (size_t i = 0; i < words.size(); ++i) {
    out(i) = static_cast<double>(static_cast<int64_t>(words[i])) / scale_;
  }
  return out;
}

PairwiseSeedMatrix PairwiseSeedMatrix::Derive(
    uint64_t experiment_seed, std::span<const uint32_t> client_ids) {
  PairwiseSeedMatrix m;
  for (size_t x = 0; x < client_ids.size(); ++x) {
    for (size_t y = x + 1; y < client_ids.size(); ++y) {
      const uint32_t a = std::min(client_ids[x], client_ids[y]);
      const uint32_t b = std::max(client_ids[x], client_ids[y]);
      m.Set(a, b,
            DeriveSeed(experiment_seed,
                       {static_cast<uint64_t>(SeedTag::kPairwiseMask), a, b}));
    }
  }
  return m;
}

void PairwiseSeedMatrix::Set(uint32_t a, uint32_t b, uint64_t seed) {
  seeds_[{std::min(a, b), std::max(a, b)}] = seed;
}

absl::StatusOr<uint64_t> PairwiseSeedMatrix::Get(uint32_t a,
                                                 uint32_t b) const {
  auto it = seeds_.find({std::min(a, b), std::max(a, b)});
  if (it == seeds_.end()) {
    return absl::NotFoundError(
        absl::StrCat("no pairwise seed for clients ", a, " and ", b));
  }
  return it->second;
}

uint64_t MaskWord(uint64_t pair_seed, uint32_t round, uint64_t index) {
  const uint64_t keyed = Mix64(pair_seed ^ Mix64(round));
  return Mix64(keyed + index * 0x9e3779b97f4a7c15ULL);
}

absl::StatusOr<MaskedShare> Mask(std::span<const uint64_t> encoded,
                                 uint32_t client_id,
                                 std::span<const uint32_t> participants,
                                 const PairwiseSeedMatrix& seeds,
                                 uint32_t round) {
  if (std::find(participants.begin(), participants.end(), client_id) ==
      participants.end()) {
    return absl::InvalidArgumentError(
        absl::StrCat("client ", client_id, " is not a participant"));
  }
  MaskedShare share;
  share.client_id = client_id;
  share.round = round;
  share.masked_values.assign(encoded.begin(), encoded.end());
  for (uint32_t other : participants) {
    if (other == client_id) continue;
    auto seed = seeds.Get(client_id, other);
    if (!seed.ok()) return seed.status();
    const bool add = client_id < other;
    for (size_t k = 0; k < share.masked_values.size(); ++k) {
      const uint64_t word = MaskWord(*seed, round, k);
      share.masked_values[k] += add ? word : -word;
    }
  }
  return share;
}

absl::StatusOr<std::vector<uint64_t>> ModularSum(
    std::span<const MaskedShare> shares,
    std::span<const uint32_t> participants, uint32_t round) {
  const std::set<uint32_t> expected(participants.begin(), participants.end());
  if (expected.size() != participants.size()) {
    return absl::InvalidArgumentError("duplicate participant id");
  }
  if (shares.empty()) return absl::AbortedError("no shares received");
  std::set<uint32_t> seen;
  const size_t dim = shares.front().masked_values.size();
  for (const MaskedShare& s : shares) {
    if (s.round != round) {
      return absl::AbortedError(absl::StrCat("share from client ", s.client_id,
                                             " is for round ", s.round,
                                             ", expected ", round));
    }
    if (!expected.contains(s.client_id)) {
      return absl::AbortedError(
          absl::StrCat("unexpected share from client ", s.client_id));
    }
    if (!seen.insert(s.client_id).second) {
      return absl::AbortedError(
          absl::StrCat("duplicate share from client ", s.client_id));
    }
    if (s.masked_values.size() != dim) {
      return absl::AbortedError("shares have different lengths");
    }
  }
  if (seen.size() != expected.size()) {
    return absl::AbortedError(absl::StrCat("missing shares: got ", seen.size(),
                                           " of ", expected.size()));
  }
  std::vector<uint64_t> sum(dim, 0);
  for (const MaskedShare& s : shares) {
    for (size_t k = 0; k < dim; ++k) sum[k] += s.masked_values[k];
  }
  return sum;
}

absl::StatusOr<ParamVector> UnmaskSum(std::span<const MaskedShare> shares,
                                      std::span<const uint32_t> participants,
                                      uint32_t round,
                                      const FixedPointCodec& codec) {
  auto sum = ModularSum(shares, participants, round);
  if (!sum.ok()) return sum.status();
  return codec.Decode(*sum);
}

}  // namespace fedmesh
