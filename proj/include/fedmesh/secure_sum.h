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

// Additive pairwise masking: the aggregator learns the sum of the clients'
// vectors and nothing about any single one (honest-but-curious server, no
// dropout recovery). This stands in for homomorphic encryption; no real key
// agreement is performed and pair seeds are derived from a shared seed.
//
// Vectors are first encoded as fixed point in Z/2^64. Client i adds
// PRG(s_ij) for every participant j > i and subtracts PRG(s_ji) for every
// j < i, so all masks cancel in the modular sum.

#ifndef FEDMESH_SECURE_SUM_H_
#define FEDMESH_SECURE_SUM_H_

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/model.h"

namespace fedmesh {

class FixedPointCodec {
 public:
  static constexpr int kDefaultScaleBits = 24;
  // Encodable magnitudes are strictly below 2^30.
  static constexpr double kMaxMagnitude = 1073741824.0;

  explicit FixedPointCodec(int scale_bits = kDefaultScaleBits);

  int scale_bits() const { return scale_bits_; }

  // round(v * 2^scale_bits) in two's complement.
  absl::StatusOr<std::vector<uint64_t>> Encode(const ParamVector& v) const;
  ParamVector Decode(std::span<const uint64_t> words) const;

 private:
  int scale_bits_;
  double scale_;
};

// Simulated pairwise key agreement: one 64-bit seed per unordered pair.
class PairwiseSeedMatrix {
 public:
  PairwiseSeedMatrix() = default;

  // Seeds for every pair of the given client ids, derived from a shared
  // experiment seed.
  static PairwiseSeedMatrix Derive(uint64_t experiment_seed,
                                   std::span<const uint32_t> client_ids);

  void Set(uint32_t a, uint32_t b, uint64_t seed);
  // Symmetric lookup; NotFound when the pair was never set.
  absl::StatusOr<uint64_t> Get(uint32_t a, uint32_t b) const;

 private:
  std::map<std::pair<uint32_t, uint32_t>, uint64_t> seeds_;
};

// Counter-based mask word for (pair seed, round, coordinate):
// Mix64(Mix64(pair_seed ^ Mix64(round)) + index * 0x9e3779b97f4a7c15).
uint64_t MaskWord(uint64_t pair_seed, uint32_t round, uint64_t index);

struct MaskedShare {
  uint32_t client_id = 0;
  uint32_t round = 0;
  std::vector<uint64_t> masked_values;

  friend bool operator==(const MaskedShare&, const MaskedShare&) = default;
};

// Masks one client's encoded vector against every other participant.
// participants must contain client_id.
absl::StatusOr<MaskedShare> Mask(std::span<const uint64_t> encoded,
                                 uint32_t client_id,
                                 std::span<const uint32_t> participants,
                                 const PairwiseSeedMatrix& seeds,
                                 uint32_t round);

// Elementwise sum mod 2^64 of a complete share set. Aborts (returns an error,
// no partial output) when any participant is missing or duplicated, a share
// is from another round, or lengths differ.
absl::StatusOr<std::vector<uint64_t>> ModularSum(
    std::span<const MaskedShare> shares,
    std::span<const uint32_t> participants, uint32_t round);

absl::StatusOr<ParamVector> UnmaskSum(std::span<const MaskedShare> shares,
                                      std::span<const uint32_t> participants,
                                      uint32_t round,
                                      const FixedPointCodec& codec);

}  // namespace fedmesh

#endif  // FEDMESH_SECURE_SUM_H_
