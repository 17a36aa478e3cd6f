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

#ifndef FEDMESH_RANDOM_H_
#define FEDMESH_RANDOM_H_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedmesh {

// SplitMix64 finalizer (Stafford variant 13). Bijective on 64-bit words.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a sequence of words into one seed: h = Mix64(h ^ w) for each word,
// starting from h = Mix64(base). Used for every per-(client, round, purpose)
// stream so that streams never share generator state.
uint64_t DeriveSeed(uint64_t base, std::initializer_list<uint64_t> words);

// Stream tags passed as the first word to DeriveSeed.
enum class SeedTag : uint64_t {
  kSynthesize = 1,
  kPartition = 2,
  kNoise = 3,
  kParticipants = 4,
  kBatchShuffle = 5,
  kPairwiseMask = 6,
  kRecipe = 7,
};

// Portable random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; all distributions are implemented
// here because the standard library's are not reproducible across vendors.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextWord() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double UniformDouble();

  // Uniform integer in [0, bound) by rejection; bound > 0.
  uint64_t UniformIndex(uint64_t bound);

  // Standard normal via the Marsaglia polar method. The spare deviate is
  // cached, so two consecutive calls consume one accepted pair.
  double Normal();

  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the
  // U^(1/shape) boost.
  double Gamma(double shape);

  // Index drawn with probability proportional to weights (not all zero).
  int Categorical(const std::vector<double>& weights);

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    // Fisher-Yates, highest index first.
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = UniformIndex(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedmesh

#endif  // FEDMESH_RANDOM_H_
