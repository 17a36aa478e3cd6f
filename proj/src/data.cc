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

#include "fedmesh/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "fedmesh/random.h"
#include "fedmesh/text.h"

namespace fedmesh {
namespace {

constexpr int kMaxDirichletAttempts = 100;
constexpr double kClassSeparation = 1.5;

}  // namespace

absl::Status ValidateRecipe(const DomainRecipe& recipe, int feature_dim,
                            int class_count) {
  if (static_cast<int>(recipe.class_means.size()) != class_count) {
    return absl::InvalidArgumentError(
        absl::StrCat("recipe '", recipe.domain_id, "' has ",
                     recipe.class_means.size(), " class means, expected ",
                     class_count));
  }
  for (const auto& mean : recipe.class_means) {
    if (mean.size() != feature_dim || !mean.allFinite()) {
      return absl::InvalidArgumentError(absl::StrCat(
          "recipe '", recipe.domain_id, "' class mean has wrong size or is "
          "not finite"));
    }
  }
  if (recipe.mean_shift.size() != feature_dim ||
      !recipe.mean_shift.allFinite()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "recipe '", recipe.domain_id, "' mean_shift must have length ",
        feature_dim));
  }
  if (!(recipe.class_covariance_scale > 0.0) ||
      !std::isfinite(recipe.class_covariance_scale)) {
    return absl::InvalidArgumentError(
        absl::StrCat("recipe '", recipe.domain_id,
                     "' class_covariance_scale must be positive"));
  }
  if (static_cast<int>(recipe.label_prior.size()) != class_count) {
    return absl::InvalidArgumentError(absl::StrCat(
        "recipe '", recipe.domain_id, "' label_prior must have ", class_count,
        " entries"));
  }
  double total = 0.0;
  for (double p : recipe.label_prior) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "recipe '", recipe.domain_id, "' label_prior has a negative entry"));
    }
    total += p;
  }
  if (total == 0.0) {
    return absl::InvalidArgumentError(absl::StrCat(
        "recipe '", recipe.domain_id, "' label_prior is all zero"));
  }
  if (std::abs(total - 1.0) > 1e-9) {
    return absl::InvalidArgumentError(
        absl::StrCat("recipe '", recipe.domain_id,
                     "' label_prior sums to ", total, ", expected 1"));
  }
  return absl::OkStatus();
}

absl::StatusOr<DomainRecipe> BuiltinRecipe(std::string_view name,
                                           int feature_dim, int class_count) {
  if (feature_dim < 1 || class_count < 2) {
    return absl::InvalidArgumentError("builtin recipes need d >= 1, K >= 2");
  }
  DomainRecipe recipe;
  recipe.domain_id = std::string(name);
  Rng rng(DeriveSeed(static_cast<uint64_t>(SeedTag::kRecipe),
                     {static_cast<uint64_t>(feature_dim),
                      static_cast<uint64_t>(class_count)}));
  for (int k = 0; k < class_count; ++k) {
    Eigen::VectorXd mean(feature_dim);
    for (int j = 0; j < feature_dim; ++j) {
      mean(j) = kClassSeparation * rng.Normal();
    }
    recipe.class_means.push_back(std::move(mean));
  }

  // Ramps over the classes used for the two skewed priors.
  std::vector<double> rising(class_count);
  for (int k = 0; k < class_count; ++k) rising[k] = k + 1.0;
  std::vector<double> falling(rising.rbegin(), rising.rend());
  auto normalized = [](std::vector<double> w) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
  };

  if (name == "medical") {
    recipe.mean_shift = Eigen::VectorXd::Zero(feature_dim);
    recipe.class_covariance_scale = 1.0;
    recipe.label_prior.assign(class_count, 1.0 / class_count);
  } else if (name == "financial") {
    recipe.mean_shift = Eigen::VectorXd::Constant(feature_dim, 0.4);
    recipe.class_covariance_scale = 1.1;
    recipe.label_prior = normalized(falling);
  } else if (name == "user") {
    recipe.mean_shift = Eigen::VectorXd::Constant(feature_dim, -0.4);
    recipe.class_covariance_scale = 1.25;
    recipe.label_prior = normalized(rising);
  } else {
    return absl::NotFoundError(absl::StrCat("unknown builtin recipe '", std::string(name),
                                            "' (medical|financial|user)"));
  }
  return recipe;
}

absl::StatusOr<Dataset> Synthesize(const DomainRecipe& recipe, int64_t n,
                                   uint64_t seed) {
  if (n < 1) return absl::InvalidArgumentError("sample count must be >= 1");
  const int class_count = static_cast<int>(recipe.class_means.size());
  const int feature_dim =
      class_count > 0 ? static_cast<int>(recipe.class_means[0].size()) : 0;
  if (absl::Status s = ValidateRecipe(recipe, feature_dim, class_count);
      !s.ok()) {
    return s;
  }
  Rng rng(DeriveSeed(seed, {static_cast<uint64_t>(SeedTag::kSynthesize)}));
  Dataset out;
  out.class_count = class_count;
  out.features.resize(n, feature_dim);
  out.labels.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const int label = rng.Categorical(recipe.label_prior);
    out.labels[i] = label;
    for (int j = 0; j < feature_dim; ++j) {
      out.features(i, j) = recipe.class_means[label](j) +
                           recipe.mean_shift(j) +
                           recipe.class_covariance_scale * rng.Normal();
    }
  }
  return out;
}

absl::Status ValidatePlan(const PartitionPlan& plan) {
  if (plan.client_count < 1) {
    return absl::InvalidArgumentError("client_count must be >= 1");
  }
  if (!(plan.dirichlet_alpha > 0.0) || !std::isfinite(plan.dirichlet_alpha)) {
    return absl::InvalidArgumentError("dirichlet_alpha must be positive");
  }
  if (plan.min_samples_per_client < 1) {
    return absl::InvalidArgumentError("min_samples_per_client must be >= 1");
  }
  return absl::OkStatus();
}

namespace {

std::vector<std::vector<int64_t>> IidSplit(int64_t n, int clients, Rng& rng) {
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.Shuffle(order);
  std::vector<std::vector<int64_t>> shards(clients);
  int64_t cursor = 0;
  for (int c = 0; c < clients; ++c) {
    const int64_t size = n / clients + (c < n % clients ? 1 : 0);
    shards[c].assign(order.begin() + cursor, order.begin() + cursor + size);
    cursor += size;
  }
  return shards;
}

std::vector<std::vector<int64_t>> DirichletSplit(
    const std::vector<std::vector<int64_t>>& by_class, int clients,
    double alpha, Rng& rng) {
  std::vector<std::vector<int64_t>> shards(clients);
  for (std::vector<int64_t> members : by_class) {
    rng.Shuffle(members);
    std::vector<double> share(clients);
    double total = 0.0;
    for (int c = 0; c < clients; ++c) {
      share[c] = rng.Gamma(alpha);
      total += share[c];
    }
    if (total <= 0.0) {
      // Every draw underflowed; the limit of Dirichlet(alpha -> 0) is a
      // point mass on one client.
      share.assign(clients, 0.0);
      share[rng.UniformIndex(clients)] = 1.0;
      total = 1.0;
    }
    const auto count = static_cast<double>(members.size());
    double cumulative = 0.0;
    int64_t begin = 0;
    for (int c = 0; c < clients; ++c) {
      cumulative += share[c];
      const int64_t end =
          c == clients - 1
              ? static_cast<int64_t>(members.size())
              : std::min<int64_t>(members.size(),
                                  std::llround(cumulative / total * count));
      for (int64_t i = begin; i < end; ++i) shards[c].push_back(members[i]);
      begin = std::max(begin, end);
    }
  }
  return shards;
}

size_t SmallestShard(const std::vector<std::vector<int64_t>>& shards) {
  size_t smallest = shards.front().size();
  for (const auto& s : shards) smallest = std::min(smallest, s.size());
  return smallest;
}

}  // namespace

absl::StatusOr<std::vector<std::vector<int64_t>>> PartitionIndices(
    const Dataset& data, const PartitionPlan& plan) {
  if (absl::Status s = ValidatePlan(plan); !s.ok()) return s;
  const int64_t n = data.size();
  const int clients = plan.client_count;
  if (n < static_cast<int64_t>(clients) * plan.min_samples_per_client) {
    return absl::FailedPreconditionError(absl::StrCat(
        "insufficient samples: ", n, " examples cannot give ", clients,
        " clients at least ", plan.min_samples_per_client, " each"));
  }
  Rng rng(DeriveSeed(plan.seed, {static_cast<uint64_t>(SeedTag::kPartition)}));
  std::vector<std::vector<int64_t>> shards;
  if (plan.scheme == PartitionScheme::kIid) {
    shards = IidSplit(n, clients, rng);
  } else {
    std::vector<std::vector<int64_t>> by_class(data.class_count);
    for (int64_t i = 0; i < n; ++i) by_class[data.labels[i]].push_back(i);
    const size_t min_size = plan.min_samples_per_client;
    for (int attempt = 0; attempt < kMaxDirichletAttempts; ++attempt) {
      shards = DirichletSplit(by_class, clients, plan.dirichlet_alpha, rng);
      if (SmallestShard(shards) >= min_size) break;
    }
    while (SmallestShard(shards) < min_size) {
      auto small = std::min_element(
          shards.begin(), shards.end(),
          [](const auto& a, const auto& b) { return a.size() < b.size(); });
      auto large = std::max_element(
          shards.begin(), shards.end(),
          [](const auto& a, const auto& b) { return a.size() < b.size(); });
      small->push_back(large->back());
      large->pop_back();
    }
  }
  for (auto& shard : shards) std::sort(shard.begin(), shard.end());
  return shards;
}

absl::StatusOr<std::vector<Dataset>> Partition(const Dataset& data,
                                               const PartitionPlan& plan) {
  auto indices = PartitionIndices(data, plan);
  if (!indices.ok()) return indices.status();
  std::vector<Dataset> out;
  out.reserve(indices->size());
  for (const auto& shard : *indices) out.push_back(Subset(data, shard));
  return out;
}

Dataset Subset(const Dataset& data, std::span<const int64_t> indices) {
  Dataset out;
  out.class_count = data.class_count;
  out.features.resize(static_cast<Eigen::Index>(indices.size()),
                      data.feature_dim());
  out.labels.resize(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    out.features.row(r) = data.features.row(indices[r]);
    out.labels[r] = data.labels[indices[r]];
  }
  return out;
}

Dataset Concatenate(std::span<const Dataset> parts) {
  Dataset out;
  if (parts.empty()) return out;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.size();
  out.class_count = parts.front().class_count;
  out.features.resize(rows, parts.front().feature_dim());
  out.labels.reserve(rows);
  Eigen::Index cursor = 0;
  for (const auto& p : parts) {
    out.features.middleRows(cursor, p.size()) = p.features;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    cursor += p.size();
  }
  return out;
}

absl::StatusOr<Dataset> LoadCsv(const std::string& path,
                                const CsvSchema& schema,
                                std::vector<std::string>* label_names) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::string line;
  if (!std::getline(in, line)) {
    return absl::InvalidArgumentError(
        absl::StrCat(path, ":1: missing header row"));
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string_view> header = SplitCommas(line);
  auto column_of = [&](const std::string& name) -> int {
    for (size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return static_cast<int>(c);
    }
    return -1;
  };
  std::vector<int> feature_cols;
  for (const auto& name : schema.feature_columns) {
    const int c = column_of(name);
    if (c < 0) {
      return absl::InvalidArgumentError(
          absl::StrCat(path, ": missing column '", name, "'"));
    }
    feature_cols.push_back(c);
  }
  const int label_col = column_of(schema.label_column);
  if (label_col < 0) {
    return absl::InvalidArgumentError(absl::StrCat(
        path, ": missing label column '", schema.label_column, "'"));
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells = SplitCommas(line);
    if (cells.size() != header.size()) {
      return absl::InvalidArgumentError(
          absl::StrCat(path, ":", line_no, ": expected ", header.size(),
                       " fields, found ", cells.size()));
    }
    std::vector<double> row;
    row.reserve(feature_cols.size());
    for (size_t f = 0; f < feature_cols.size(); ++f) {
      auto v = ParseDouble(cells[feature_cols[f]]);
      if (!v.has_value() || !std::isfinite(*v)) {
        return absl::InvalidArgumentError(absl::StrCat(
            path, ":", line_no, ": non-numeric value '",
            std::string(cells[feature_cols[f]]), "' in column '",
            schema.feature_columns[f], "'"));
      }
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
    raw_labels.emplace_back(cells[label_col]);
  }
  if (rows.empty()) {
    return absl::InvalidArgumentError(
        absl::StrCat(path, ": empty dataset"));
  }

  std::map<std::string, int> mapping;
  for (const auto& l : raw_labels) mapping.emplace(l, 0);
  int next = 0;
  for (auto& [name, index] : mapping) index = next++;

  Dataset out;
  out.class_count = static_cast<int>(mapping.size());
  out.features.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(feature_cols.size()));
  out.labels.resize(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t f = 0; f < feature_cols.size(); ++f) {
      out.features(r, f) = rows[r][f];
    }
    out.labels[r] = mapping.at(raw_labels[r]);
  }
  if (label_names != nullptr) {
    label_names->clear();
    for (const auto& [name, index] : mapping) label_names->push_back(name);
  }
  return out;
}

absl::Status WriteCsv(const std::string& path, const Dataset& data,
                      const CsvSchema& schema,
                      const std::vector<std::string>* label_names) {
  if (static_cast<int>(schema.feature_columns.size()) != data.feature_dim()) {
    return absl::InvalidArgumentError("schema and dataset widths differ");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  for (const auto& name : schema.feature_columns) out << name << ',';
  out << schema.label_column << '\n';
  const size_t width = std::to_string(std::max(0, data.class_count - 1)).size();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      out << FormatDouble(data.features(i, j)) << ',';
    }
    const int y = data.labels[i];
    if (label_names != nullptr) {
      out << (*label_names)[y];
    } else {
      std::string s = std::to_string(y);
      out << std::string(width - s.size(), '0') << s;
    }
    out << '\n';
  }
  if (!out) return absl::DataLossError(absl::StrCat("write failed: ", path));
  return absl::OkStatus();
}

}  // namespace fedmesh
