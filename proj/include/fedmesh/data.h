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

// Synthetic domain generators, client partitioning, and CSV ingestion.

#ifndef FEDMESH_DATA_H_
#define FEDMESH_DATA_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/model.h"

namespace fedmesh {

// Class-conditional Gaussian generator for one domain. Features of class k
// are drawn from N(class_means[k] + mean_shift, scale^2 * I).
struct DomainRecipe {
  std::string domain_id;
  std::vector<Eigen::VectorXd> class_means;
  double class_covariance_scale = 1.0;
  Eigen::VectorXd mean_shift;
  std::vector<double> label_prior;
};

absl::Status ValidateRecipe(const DomainRecipe& recipe, int feature_dim,
                            int class_count);

// Names accepted by BuiltinRecipe.
inline constexpr std::string_view kBuiltinRecipes[] = {"medical", "financial",
                                                       "user"};

// The three bundled domains share class means (drawn once from a fixed seed
// for the given d and K) and differ in offset, spread and label prior.
absl::StatusOr<DomainRecipe> BuiltinRecipe(std::string_view name,
                                           int feature_dim, int class_count);

absl::StatusOr<Dataset> Synthesize(const DomainRecipe& recipe, int64_t n,
                                   uint64_t seed);

enum class PartitionScheme { kIid, kDirichletLabelSkew };

struct PartitionPlan {
  int client_count = 1;
  PartitionScheme scheme = PartitionScheme::kIid;
  double dirichlet_alpha = 1.0;
  int min_samples_per_client = 1;
  uint64_t seed = 0;
};

absl::Status ValidatePlan(const PartitionPlan& plan);

// Example indices assigned to each client, ascending within a shard. The
// shards are disjoint and cover [0, |D|).
//
// Under kDirichletLabelSkew each class's examples are split across clients
// by proportions drawn from Dirichlet(alpha, ..., alpha). Draws whose smallest
// shard is below min_samples_per_client are redrawn (up to a fixed number of
// attempts), after which the largest shards donate examples to the small ones.
absl::StatusOr<std::vector<std::vector<int64_t>>> PartitionIndices(
    const Dataset& data, const PartitionPlan& plan);

absl::StatusOr<std::vector<Dataset>> Partition(const Dataset& data,
                                               const PartitionPlan& plan);

Dataset Subset(const Dataset& data, std::span<const int64_t> indices);

// Rows of all parts in order. Parts must agree on d and K.
Dataset Concatenate(std::span<const Dataset> parts);

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string label_column;
};

// Comma-separated, header row first, '.' decimal point, no quoting. Labels
// are arbitrary strings mapped to indices in sorted order of the distinct
// strings. If label_names is non-null it receives that sorted list.
absl::StatusOr<Dataset> LoadCsv(const std::string& path,
                                const CsvSchema& schema,
                                std::vector<std::string>* label_names = nullptr);

// Writes data with the given schema's column names. Labels are written as
// label_names[y] when provided, otherwise as zero-padded indices so that
// the sorted-string mapping of LoadCsv reproduces them.
absl::Status WriteCsv(const std::string& path, const Dataset& data,
                      const CsvSchema& schema,
                      const std::vector<std::string>* label_names = nullptr);

}  // namespace fedmesh

#endif  // FEDMESH_DATA_H_
