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

#ifndef FEDMESH_EVAL_H_
#define FEDMESH_EVAL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/model.h"
#include "fedmesh/privacy.h"

namespace fedmesh {

// counts(true, predicted).
struct ConfusionMatrix {
  Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int64_t total() const { return counts.sum(); }
};

enum class Averaging { kMacro, kMicro };

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

absl::StatusOr<ConfusionMatrix> Confusion(const ModelSpec& spec,
                                          const ParamVector& theta,
                                          const Dataset& test);

// Macro averages run over the classes that occur in the test set (non-zero
// row sum). Per class, precision is 0 when nothing was predicted for it and
// F1 is 0 when precision + recall is 0. Micro averaging collapses all three
// to accuracy for single-label data.
absl::StatusOr<MetricsReport> Metrics(const ConfusionMatrix& cm,
                                      Averaging averaging = Averaging::kMacro);

absl::StatusOr<std::vector<double>> TraceParameters(
    const ParamVector& theta, std::span<const int> indices);

// What the server knows about one client after a round.
struct ClientRecord {
  uint32_t client_id = 0;
  std::string domain;
  bool participated = false;
  bool flagged = false;
  int64_t sample_count = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double coefficient = 0.0;
  PrivacyBudget budget;
  NoiseReceipt receipt;
};

struct DomainLoss {
  std::string domain;
  double loss = 0.0;
};

struct DomainTrace {
  std::string domain;
  std::vector<double> values;
};

// One round's observable state. Domain order and tracked indices are fixed
// for a whole experiment.
struct RoundReport {
  uint32_t round = 0;
  double learning_rate = 0.0;
  std::vector<DomainLoss> domain_losses;
  MetricsReport metrics;
  std::vector<double> global_trace;
  // Mean released parameters of each domain's participants. Empty under
  // secure aggregation, where individual contributions are hidden.
  std::vector<DomainTrace> domain_traces;
  std::vector<ClientRecord> clients;
};

}  // namespace fedmesh

#endif  // FEDMESH_EVAL_H_
