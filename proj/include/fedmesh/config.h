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

// Experiment configuration: a JSON document with fixed keys. Every key is
// optional except data.domains; unknown keys are rejected. See
// configs/three_domains.cfg for the canonical layout.

#ifndef FEDMESH_CONFIG_H_
#define FEDMESH_CONFIG_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "fedmesh/data.h"
#include "fedmesh/eval.h"
#include "fedmesh/federation.h"
#include "fedmesh/privacy.h"
#include "json.hpp"

namespace fedmesh {

struct CustomRecipe {
  std::vector<std::vector<double>> class_means;
  double class_covariance_scale = 1.0;
  std::vector<double> mean_shift;
  std::vector<double> label_prior;

  friend bool operator==(const CustomRecipe&, const CustomRecipe&) = default;
};

struct CsvSource {
  std::string train_path;
  std::string test_path;
  CsvSchema schema;

  friend bool operator==(const CsvSource& a, const CsvSource& b) {
    return a.train_path == b.train_path && a.test_path == b.test_path &&
           a.schema.feature_columns == b.schema.feature_columns &&
           a.schema.label_column == b.schema.label_column;
  }
};

// One data domain. Exactly one of a builtin recipe name, a custom recipe or
// a CSV source supplies the examples.
struct DomainConfig {
  std::string tag;
  std::string recipe;
  std::optional<CustomRecipe> custom;
  std::optional<CsvSource> csv;
  int64_t train_samples = 600;
  int64_t test_samples = 300;
  int clients = 1;

  friend bool operator==(const DomainConfig&, const DomainConfig&) = default;
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kUniform;
  std::map<uint32_t, double> weights;
  bool derive_from_privacy = false;
  double epsilon_cap = 8.0;

  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct ExperimentConfig {
  ModelSpec model{ModelFamily::kSoftmaxLinear, 4, 3, 0.0};
  std::vector<DomainConfig> domains;
  PartitionScheme partition_scheme = PartitionScheme::kIid;
  double dirichlet_alpha = 1.0;
  int min_samples_per_client = 10;
  TrainingSchedule schedule;
  PolicyConfig policy;
  PrivacyBudget privacy;
  std::map<uint32_t, PrivacyBudget> privacy_overrides;
  bool secure_aggregation = false;
  int fixed_point_bits = 24;
  uint64_t seed = 42;
  std::vector<int> tracked_parameters;
  Averaging averaging = Averaging::kMacro;
  // Not part of the experiment identity (excluded from the hash).
  std::string output_dir = "fedmesh_out";
  double timeout_seconds = 30.0;
  std::string address = "127.0.0.1:7700";

  int client_count() const;

  friend bool operator==(const ExperimentConfig&,
                         const ExperimentConfig&) = default;
};

// Error messages name the offending key path, e.g. "schedule.rounds".
absl::StatusOr<ExperimentConfig> ParseConfig(const nlohmann::json& doc);
absl::StatusOr<ExperimentConfig> ParseConfigText(const std::string& text);
absl::StatusOr<nlohmann::json> ReadConfigJson(const std::string& path);

// Canonical form: every key present, objects in sorted key order.
nlohmann::json ToJson(const ExperimentConfig& config);

// Applies "a.b.c=value" to doc. The value is parsed as JSON when possible
// and taken as a string otherwise. Numeric segments index arrays.
absl::Status ApplyOverride(nlohmann::json& doc, const std::string& assignment);

// FNV-1a 64 of the canonical form minus output_dir and transport settings.
uint64_t ConfigHash(const ExperimentConfig& config);

// Generates or loads every dataset and assembles the federation. Client ids
// are assigned 0, 1, ... in domain order.
absl::StatusOr<FederationSetup> BuildSetup(const ExperimentConfig& config);

}  // namespace fedmesh

#endif  // FEDMESH_CONFIG_H_
