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

// Small federations built from the builtin recipes, for tests.

#ifndef FEDMESH_TESTS_FIXTURES_H_
#define FEDMESH_TESTS_FIXTURES_H_

#include <string>
#include <vector>

#include "fedmesh/data.h"
#include "fedmesh/federation.h"
#include "fedmesh/random.h"

namespace fedmesh::testing {

struct FixtureOptions {
  int clients = 3;
  int rounds = 5;
  int samples_per_client = 120;
  int feature_dim = 4;
  int class_count = 3;
  bool secure = false;
  uint64_t seed = 17;
};

// Client i draws from the builtin recipe i % 3; every domain contributes a
// test split.
inline FederationSetup MakeSetup(const FixtureOptions& o) {
  const char* names[] = {"medical", "financial", "user"};
  FederationSetup setup;
  setup.spec = {ModelFamily::kSoftmaxLinear, o.feature_dim, o.class_count,
                0.001};
  setup.schedule.rounds = o.rounds;
  setup.schedule.local_epochs = 2;
  setup.secure_aggregation = o.secure;
  setup.seed = o.seed;
  setup.policy.kind = PolicyKind::kSizeWeighted;
  setup.tracked_indices = {0, o.feature_dim};
  std::vector<Dataset> tests;
  for (int i = 0; i < o.clients; ++i) {
    auto recipe = BuiltinRecipe(names[i % 3], o.feature_dim, o.class_count);
    ClientState c;
    c.client_id = i;
    c.domain_tag = names[i % 3];
    c.local_data = *Synthesize(*recipe, o.samples_per_client + 10 * i,
                               DeriveSeed(o.seed, {100, uint64_t(i)}));
    setup.clients.push_back(std::move(c));
    if (i < 3) {
      Dataset test = *Synthesize(*recipe, 60, DeriveSeed(o.seed, {200, uint64_t(i)}));
      tests.push_back(test);
      setup.domain_tests.push_back({names[i], std::move(test)});
    }
  }
  setup.pooled_test = Concatenate(tests);
  return setup;
}

}  // namespace fedmesh::testing

#endif  // FEDMESH_TESTS_FIXTURES_H_
