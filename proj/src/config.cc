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

#include "fedmesh/config.h"

#include <fstream>
#include <set>
#include <sstream>

#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_split.h"
#include "fedmesh/random.h"
#include "logging.h"

namespace fedmesh {

using nlohmann::json;

namespace {

std::string Join(absl::string_view path, absl::string_view key) {
  return path.empty() ? std::string(key) : absl::StrCat(path, ".", key);
}

absl::Status KeyError(absl::string_view path, absl::string_view message) {
  return absl::InvalidArgumentError(absl::StrCat(path, ": ", message));
}

// Reads typed fields out of one JSON object, remembering its key path.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {}

  absl::Status Expect(std::initializer_list<std::string_view> allowed) const {
    if (!obj_.is_object()) return KeyError(path_, "expected an object");
    for (const auto& [key, value] : obj_.items()) {
      bool known = false;
      for (auto a : allowed) known = known || key == a;
      if (!known) return KeyError(Join(path_, key), "unknown key");
    }
    return absl::OkStatus();
  }

  bool Has(const std::string& key) const {
    return obj_.contains(key) && !obj_.at(key).is_null();
  }
  const json& At(const std::string& key) const { return obj_.at(key); }
  std::string PathOf(absl::string_view key) const { return Join(path_, key); }

  absl::Status Number(const std::string& key, double& out) const {
    if (!Has(key)) return absl::OkStatus();
    if (!At(key).is_number()) return KeyError(PathOf(key), "expected a number");
    out = At(key).get<double>();
    return absl::OkStatus();
  }
  template <typename Int>
  absl::Status Integer(const std::string& key, Int& out) const {
    if (!Has(key)) return absl::OkStatus();
    const json& v = At(key);
    if (!v.is_number_integer()) {
      return KeyError(PathOf(key), "expected an integer");
    }
    if (std::is_unsigned_v<Int> && v.is_number_integer() &&
        !v.is_number_unsigned() && v.get<int64_t>() < 0) {
      return KeyError(PathOf(key), "must be non-negative");
    }
    out = v.get<Int>();
    return absl::OkStatus();
  }
  absl::Status Bool(const std::string& key, bool& out) const {
    if (!Has(key)) return absl::OkStatus();
    if (!At(key).is_boolean()) {
      return KeyError(PathOf(key), "expected true or false");
    }
    out = At(key).get<bool>();
    return absl::OkStatus();
  }
  absl::Status String(const std::string& key, std::string& out) const {
    if (!Has(key)) return absl::OkStatus();
    if (!At(key).is_string()) return KeyError(PathOf(key), "expected a string");
    out = At(key).get<std::string>();
    return absl::OkStatus();
  }
  absl::Status Numbers(const std::string& key, std::vector<double>& out) const {
    if (!Has(key)) return absl::OkStatus();
    if (!At(key).is_array()) return KeyError(PathOf(key), "expected an array");
    out.clear();
    for (const json& v : At(key)) {
      if (!v.is_number()) return KeyError(PathOf(key), "expected numbers");
      out.push_back(v.get<double>());
    }
    return absl::OkStatus();
  }

 private:
  const json& obj_;
  std::string path_;
};

#define FEDMESH_RETURN_IF_ERROR(expr)      \
  do {                                     \
    if (absl::Status _s = (expr); !_s.ok()) return _s; \
  } while (0)

absl::StatusOr<uint32_t> ParseClientKey(const std::string& key,
                                        absl::string_view path) {
  uint32_t id;
  if (!absl::SimpleAtoi(key, &id)) {
    return KeyError(Join(path, key), "client keys must be non-negative integers");
  }
  return id;
}

absl::Status ParseBudget(const Section& s, PrivacyBudget& budget) {
  FEDMESH_RETURN_IF_ERROR(s.Bool("enabled", budget.enabled));
  FEDMESH_RETURN_IF_ERROR(s.Number("epsilon", budget.epsilon));
  FEDMESH_RETURN_IF_ERROR(s.Number("delta", budget.delta));
  FEDMESH_RETURN_IF_ERROR(s.Number("clip_norm", budget.clip_norm));
  if (!(budget.epsilon > 0.0)) {
    return KeyError(s.PathOf("epsilon"), "must be positive");
  }
  if (!(budget.delta > 0.0 && budget.delta < 1.0)) {
    return KeyError(s.PathOf("delta"), "must lie in (0, 1)");
  }
  if (!(budget.clip_norm > 0.0)) {
    return KeyError(s.PathOf("clip_norm"), "must be positive");
  }
  return absl::OkStatus();
}

json BudgetJson(const PrivacyBudget& b) {
  return json{{"enabled", b.enabled},
              {"epsilon", b.epsilon},
              {"delta", b.delta},
              {"clip_norm", b.clip_norm}};
}

absl::Status ParseDomain(const json& j, const std::string& path,
                         DomainConfig& d) {
  Section s(j, path);
  FEDMESH_RETURN_IF_ERROR(s.Expect({"tag", "recipe", "custom", "csv",
                                    "train_samples", "test_samples",
                                    "clients"}));
  FEDMESH_RETURN_IF_ERROR(s.String("recipe", d.recipe));
  FEDMESH_RETURN_IF_ERROR(s.String("tag", d.tag));
  FEDMESH_RETURN_IF_ERROR(s.Integer("train_samples", d.train_samples));
  FEDMESH_RETURN_IF_ERROR(s.Integer("test_samples", d.test_samples));
  FEDMESH_RETURN_IF_ERROR(s.Integer("clients", d.clients));
  if (d.clients < 1) return KeyError(s.PathOf("clients"), "must be >= 1");
  if (d.train_samples < 1) {
    return KeyError(s.PathOf("train_samples"), "must be >= 1");
  }
  if (d.test_samples < 1) {
    return KeyError(s.PathOf("test_samples"), "must be >= 1");
  }
  if (s.Has("custom")) {
    Section c(s.At("custom"), s.PathOf("custom"));
    FEDMESH_RETURN_IF_ERROR(c.Expect({"class_means", "class_covariance_scale",
                                      "mean_shift", "label_prior"}));
    CustomRecipe r;
    if (!c.Has("class_means") || !c.At("class_means").is_array()) {
      return KeyError(c.PathOf("class_means"), "expected an array of arrays");
    }
    for (const json& row : c.At("class_means")) {
      if (!row.is_array()) {
        return KeyError(c.PathOf("class_means"), "expected an array of arrays");
      }
      std::vector<double> mean;
      for (const json& v : row) {
        if (!v.is_number()) {
          return KeyError(c.PathOf("class_means"), "expected numbers");
        }
        mean.push_back(v.get<double>());
      }
      r.class_means.push_back(std::move(mean));
    }
    FEDMESH_RETURN_IF_ERROR(
        c.Number("class_covariance_scale", r.class_covariance_scale));
    FEDMESH_RETURN_IF_ERROR(c.Numbers("mean_shift", r.mean_shift));
    FEDMESH_RETURN_IF_ERROR(c.Numbers("label_prior", r.label_prior));
    d.custom = std::move(r);
    if (d.recipe.empty()) d.recipe = "custom";
  }
  if (s.Has("csv")) {
    Section c(s.At("csv"), s.PathOf("csv"));
    FEDMESH_RETURN_IF_ERROR(
        c.Expect({"train", "test", "feature_columns", "label_column"}));
    CsvSource src;
    FEDMESH_RETURN_IF_ERROR(c.String("train", src.train_path));
    FEDMESH_RETURN_IF_ERROR(c.String("test", src.test_path));
    FEDMESH_RETURN_IF_ERROR(c.String("label_column", src.schema.label_column));
    if (c.Has("feature_columns")) {
      if (!c.At("feature_columns").is_array()) {
        return KeyError(c.PathOf("feature_columns"), "expected an array");
      }
      for (const json& v : c.At("feature_columns")) {
        if (!v.is_string()) {
          return KeyError(c.PathOf("feature_columns"), "expected strings");
        }
        src.schema.feature_columns.push_back(v.get<std::string>());
      }
    }
    if (src.train_path.empty() || src.test_path.empty() ||
        src.schema.label_column.empty() || src.schema.feature_columns.empty()) {
      return KeyError(c.PathOf(""), "train, test, feature_columns and "
                                    "label_column are required");
    }
    d.csv = std::move(src);
    if (d.recipe.empty()) d.recipe = "csv";
  }
  if (d.custom.has_value() && d.csv.has_value()) {
    return KeyError(path, "custom and csv are mutually exclusive");
  }
  if (d.recipe.empty()) return KeyError(s.PathOf("recipe"), "is required");
  if (!d.custom && !d.csv) {
    bool builtin = false;
    for (auto name : kBuiltinRecipes) builtin = builtin || d.recipe == name;
    if (!builtin) {
      return KeyError(s.PathOf("recipe"),
                      absl::StrCat("unknown recipe '", d.recipe,
                                   "' (medical|financial|user)"));
    }
  }
  if (d.tag.empty()) d.tag = d.recipe;
  return absl::OkStatus();
}

}  // namespace

int ExperimentConfig::client_count() const {
  int n = 0;
  for (const auto& d : domains) n += d.clients;
  return n;
}

absl::StatusOr<ExperimentConfig> ParseConfig(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  FEDMESH_RETURN_IF_ERROR(root.Expect({"model", "data", "schedule", "policy",
                                       "privacy", "secure_aggregation", "seed",
                                       "eval", "output_dir", "transport"}));

  if (root.Has("model")) {
    Section s(root.At("model"), "model");
    FEDMESH_RETURN_IF_ERROR(
        s.Expect({"family", "feature_dim", "class_count", "l2"}));
    std::string family = "softmax_linear";
    FEDMESH_RETURN_IF_ERROR(s.String("family", family));
    if (family != "softmax_linear") {
      return KeyError("model.family", "only softmax_linear is supported");
    }
    FEDMESH_RETURN_IF_ERROR(s.Integer("feature_dim", c.model.feature_dim));
    FEDMESH_RETURN_IF_ERROR(s.Integer("class_count", c.model.class_count));
    FEDMESH_RETURN_IF_ERROR(s.Number("l2", c.model.l2_coefficient));
    if (c.model.feature_dim < 1) {
      return KeyError("model.feature_dim", "must be >= 1");
    }
    if (c.model.class_count < 2) {
      return KeyError("model.class_count", "must be >= 2");
    }
    if (!(c.model.l2_coefficient >= 0.0)) {
      return KeyError("model.l2", "must be >= 0");
    }
  }

  if (!root.Has("data")) return KeyError("data", "is required");
  {
    Section s(root.At("data"), "data");
    FEDMESH_RETURN_IF_ERROR(s.Expect({"domains", "partition"}));
    if (!s.Has("domains") || !s.At("domains").is_array() ||
        s.At("domains").empty()) {
      return KeyError("data.domains", "expected a non-empty array");
    }
    std::set<std::string> tags;
    for (size_t i = 0; i < s.At("domains").size(); ++i) {
      DomainConfig d;
      const std::string path = absl::StrCat("data.domains.", i);
      FEDMESH_RETURN_IF_ERROR(ParseDomain(s.At("domains")[i], path, d));
      if (!tags.insert(d.tag).second) {
        return KeyError(Join(path, "tag"),
                        absl::StrCat("duplicate domain tag '", d.tag, "'"));
      }
      c.domains.push_back(std::move(d));
    }
    if (s.Has("partition")) {
      Section p(s.At("partition"), "data.partition");
      FEDMESH_RETURN_IF_ERROR(
          p.Expect({"scheme", "alpha", "min_samples_per_client"}));
      std::string scheme = "iid";
      FEDMESH_RETURN_IF_ERROR(p.String("scheme", scheme));
      if (scheme == "iid") {
        c.partition_scheme = PartitionScheme::kIid;
      } else if (scheme == "dirichlet_label_skew") {
        c.partition_scheme = PartitionScheme::kDirichletLabelSkew;
      } else {
        return KeyError("data.partition.scheme",
                        "expected iid or dirichlet_label_skew");
      }
      FEDMESH_RETURN_IF_ERROR(p.Number("alpha", c.dirichlet_alpha));
      FEDMESH_RETURN_IF_ERROR(
          p.Integer("min_samples_per_client", c.min_samples_per_client));
      if (!(c.dirichlet_alpha > 0.0)) {
        return KeyError("data.partition.alpha", "must be positive");
      }
      if (c.min_samples_per_client < 1) {
        return KeyError("data.partition.min_samples_per_client",
                        "must be >= 1");
      }
    }
  }

  if (root.Has("schedule")) {
    Section s(root.At("schedule"), "schedule");
    FEDMESH_RETURN_IF_ERROR(
        s.Expect({"rounds", "local_epochs", "batch_size", "learning_rate",
                  "lr_decay", "participation_fraction"}));
    TrainingSchedule& t = c.schedule;
    FEDMESH_RETURN_IF_ERROR(s.Integer("rounds", t.rounds));
    FEDMESH_RETURN_IF_ERROR(s.Integer("local_epochs", t.local_epochs));
    if (s.Has("batch_size")) {
      int batch = 0;
      FEDMESH_RETURN_IF_ERROR(s.Integer("batch_size", batch));
      t.batch_size = batch;
    }
    FEDMESH_RETURN_IF_ERROR(s.Number("learning_rate", t.learning_rate));
    FEDMESH_RETURN_IF_ERROR(s.Number("lr_decay", t.lr_decay));
    FEDMESH_RETURN_IF_ERROR(
        s.Number("participation_fraction", t.participation_fraction));
    if (t.rounds < 1) return KeyError("schedule.rounds", "must be >= 1");
    if (t.local_epochs < 1) {
      return KeyError("schedule.local_epochs", "must be >= 1");
    }
    if (t.batch_size.has_value() && *t.batch_size < 1) {
      return KeyError("schedule.batch_size", "must be >= 1 or null");
    }
    if (!(t.learning_rate > 0.0)) {
      return KeyError("schedule.learning_rate", "must be positive");
    }
    if (!(t.lr_decay > 0.0 && t.lr_decay <= 1.0)) {
      return KeyError("schedule.lr_decay", "must lie in (0, 1]");
    }
    if (!(t.participation_fraction > 0.0 && t.participation_fraction <= 1.0)) {
      return KeyError("schedule.participation_fraction", "must lie in (0, 1]");
    }
  }

  if (root.Has("privacy")) {
    Section s(root.At("privacy"), "privacy");
    FEDMESH_RETURN_IF_ERROR(s.Expect(
        {"enabled", "epsilon", "delta", "clip_norm", "clients"}));
    FEDMESH_RETURN_IF_ERROR(ParseBudget(s, c.privacy));
    if (s.Has("clients")) {
      Section clients(s.At("clients"), "privacy.clients");
      if (!s.At("clients").is_object()) {
        return KeyError("privacy.clients", "expected an object");
      }
      for (const auto& [key, value] : s.At("clients").items()) {
        auto id = ParseClientKey(key, "privacy.clients");
        if (!id.ok()) return id.status();
        Section one(value, clients.PathOf(key));
        FEDMESH_RETURN_IF_ERROR(
            one.Expect({"enabled", "epsilon", "delta", "clip_norm"}));
        PrivacyBudget budget = c.privacy;
        FEDMESH_RETURN_IF_ERROR(ParseBudget(one, budget));
        c.privacy_overrides[*id] = budget;
      }
    }
  }

  if (root.Has("policy")) {
    Section s(root.At("policy"), "policy");
    FEDMESH_RETURN_IF_ERROR(
        s.Expect({"kind", "weights", "derive_from_privacy", "epsilon_cap"}));
    std::string kind = "uniform";
    FEDMESH_RETURN_IF_ERROR(s.String("kind", kind));
    if (kind == "uniform") {
      c.policy.kind = PolicyKind::kUniform;
    } else if (kind == "size_weighted") {
      c.policy.kind = PolicyKind::kSizeWeighted;
    } else if (kind == "custom_weighted") {
      c.policy.kind = PolicyKind::kCustomWeighted;
    } else {
      return KeyError("policy.kind",
                      "expected uniform, size_weighted or custom_weighted");
    }
    FEDMESH_RETURN_IF_ERROR(
        s.Bool("derive_from_privacy", c.policy.derive_from_privacy));
    FEDMESH_RETURN_IF_ERROR(s.Number("epsilon_cap", c.policy.epsilon_cap));
    if (!(c.policy.epsilon_cap > 0.0)) {
      return KeyError("policy.epsilon_cap", "must be positive");
    }
    if (s.Has("weights")) {
      if (!s.At("weights").is_object()) {
        return KeyError("policy.weights", "expected an object");
      }
      for (const auto& [key, value] : s.At("weights").items()) {
        auto id = ParseClientKey(key, "policy.weights");
        if (!id.ok()) return id.status();
        if (!value.is_number() || !(value.get<double>() >= 0.0)) {
          return KeyError(Join("policy.weights", key),
                          "expected a non-negative number");
        }
        c.policy.weights[*id] = value.get<double>();
      }
    }
  }

  if (root.Has("secure_aggregation")) {
    Section s(root.At("secure_aggregation"), "secure_aggregation");
    FEDMESH_RETURN_IF_ERROR(s.Expect({"enabled", "fixed_point_bits"}));
    FEDMESH_RETURN_IF_ERROR(s.Bool("enabled", c.secure_aggregation));
    FEDMESH_RETURN_IF_ERROR(s.Integer("fixed_point_bits", c.fixed_point_bits));
    if (c.fixed_point_bits < 1 || c.fixed_point_bits > 32) {
      return KeyError("secure_aggregation.fixed_point_bits",
                      "must lie in [1, 32]");
    }
  }

  FEDMESH_RETURN_IF_ERROR(root.Integer("seed", c.seed));

  c.tracked_parameters = {0, c.model.feature_dim};
  if (root.Has("eval")) {
    Section s(root.At("eval"), "eval");
    FEDMESH_RETURN_IF_ERROR(s.Expect({"averaging", "tracked_parameters"}));
    std::string averaging = "macro";
    FEDMESH_RETURN_IF_ERROR(s.String("averaging", averaging));
    if (averaging == "macro") {
      c.averaging = Averaging::kMacro;
    } else if (averaging == "micro") {
      c.averaging = Averaging::kMicro;
    } else {
      return KeyError("eval.averaging", "expected macro or micro");
    }
    if (s.Has("tracked_parameters")) {
      if (!s.At("tracked_parameters").is_array()) {
        return KeyError("eval.tracked_parameters", "expected an array");
      }
      c.tracked_parameters.clear();
      for (const json& v : s.At("tracked_parameters")) {
        if (!v.is_number_integer()) {
          return KeyError("eval.tracked_parameters", "expected integers");
        }
        c.tracked_parameters.push_back(v.get<int>());
      }
    }
  }
  for (int index : c.tracked_parameters) {
    if (index < 0 || index >= ParamDim(c.model)) {
      return KeyError("eval.tracked_parameters",
                      absl::StrCat("index ", index, " outside [0, ",
                                   ParamDim(c.model), ")"));
    }
  }

  FEDMESH_RETURN_IF_ERROR(root.String("output_dir", c.output_dir));
  if (root.Has("transport")) {
    Section s(root.At("transport"), "transport");
    FEDMESH_RETURN_IF_ERROR(s.Expect({"address", "timeout_seconds"}));
    FEDMESH_RETURN_IF_ERROR(s.String("address", c.address));
    FEDMESH_RETURN_IF_ERROR(s.Number("timeout_seconds", c.timeout_seconds));
    if (!(c.timeout_seconds > 0.0)) {
      return KeyError("transport.timeout_seconds", "must be positive");
    }
  }

  // Cross-section checks.
  const int n = c.client_count();
  for (const auto& [id, budget] : c.privacy_overrides) {
    if (id >= static_cast<uint32_t>(n)) {
      return KeyError(Join("privacy.clients", std::to_string(id)),
                      absl::StrCat("no such client (", n, " clients)"));
    }
  }
  if (c.policy.kind == PolicyKind::kCustomWeighted &&
      !c.policy.derive_from_privacy) {
    for (int id = 0; id < n; ++id) {
      if (!c.policy.weights.contains(id)) {
        return KeyError("policy.weights",
                        absl::StrCat("missing weight for client ", id));
      }
    }
  }
  for (const auto& [id, w] : c.policy.weights) {
    if (id >= static_cast<uint32_t>(n)) {
      return KeyError(Join("policy.weights", std::to_string(id)),
                      absl::StrCat("no such client (", n, " clients)"));
    }
  }
  return c;
}

absl::StatusOr<ExperimentConfig> ParseConfigText(const std::string& text) {
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false,
                         /*ignore_comments=*/true);
  if (doc.is_discarded()) {
    return absl::InvalidArgumentError("config is not valid JSON");
  }
  return ParseConfig(doc);
}

absl::StatusOr<json> ReadConfigJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str(), nullptr, /*allow_exceptions=*/true,
                       /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    return absl::InvalidArgumentError(
        absl::StrCat(path, ": not valid JSON: ", e.what()));
  }
}

json ToJson(const ExperimentConfig& c) {
  json domains = json::array();
  for (const DomainConfig& d : c.domains) {
    json dj{{"tag", d.tag},
            {"recipe", d.recipe},
            {"train_samples", d.train_samples},
            {"test_samples", d.test_samples},
            {"clients", d.clients}};
    if (d.custom.has_value()) {
      dj["custom"] = {{"class_means", d.custom->class_means},
                      {"class_covariance_scale",
                       d.custom->class_covariance_scale},
                      {"mean_shift", d.custom->mean_shift},
                      {"label_prior", d.custom->label_prior}};
    }
    if (d.csv.has_value()) {
      dj["csv"] = {{"train", d.csv->train_path},
                   {"test", d.csv->test_path},
                   {"feature_columns", d.csv->schema.feature_columns},
                   {"label_column", d.csv->schema.label_column}};
    }
    domains.push_back(std::move(dj));
  }
  json weights = json::object();
  for (const auto& [id, w] : c.policy.weights) {
    weights[std::to_string(id)] = w;
  }
  json overrides = json::object();
  for (const auto& [id, b] : c.privacy_overrides) {
    overrides[std::to_string(id)] = BudgetJson(b);
  }
  json privacy = BudgetJson(c.privacy);
  privacy["clients"] = overrides;
  const char* kind = c.policy.kind == PolicyKind::kUniform ? "uniform"
                     : c.policy.kind == PolicyKind::kSizeWeighted
                         ? "size_weighted"
                         : "custom_weighted";
  return json{
      {"model",
       {{"family", "softmax_linear"},
        {"feature_dim", c.model.feature_dim},
        {"class_count", c.model.class_count},
        {"l2", c.model.l2_coefficient}}},
      {"data",
       {{"domains", domains},
        {"partition",
         {{"scheme", c.partition_scheme == PartitionScheme::kIid
                         ? "iid"
                         : "dirichlet_label_skew"},
          {"alpha", c.dirichlet_alpha},
          {"min_samples_per_client", c.min_samples_per_client}}}}},
      {"schedule",
       {{"rounds", c.schedule.rounds},
        {"local_epochs", c.schedule.local_epochs},
        {"batch_size", c.schedule.batch_size.has_value()
                           ? json(*c.schedule.batch_size)
                           : json(nullptr)},
        {"learning_rate", c.schedule.learning_rate},
        {"lr_decay", c.schedule.lr_decay},
        {"participation_fraction", c.schedule.participation_fraction}}},
      {"policy",
       {{"kind", kind},
        {"weights", weights},
        {"derive_from_privacy", c.policy.derive_from_privacy},
        {"epsilon_cap", c.policy.epsilon_cap}}},
      {"privacy", privacy},
      {"secure_aggregation",
       {{"enabled", c.secure_aggregation},
        {"fixed_point_bits", c.fixed_point_bits}}},
      {"seed", c.seed},
      {"eval",
       {{"averaging", c.averaging == Averaging::kMacro ? "macro" : "micro"},
        {"tracked_parameters", c.tracked_parameters}}},
      {"output_dir", c.output_dir},
      {"transport",
       {{"address", c.address}, {"timeout_seconds", c.timeout_seconds}}},
  };
}

absl::Status ApplyOverride(json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    return absl::InvalidArgumentError(
        absl::StrCat("override '", assignment, "' is not KEY=VALUE"));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  const std::vector<std::string> parts = absl::StrSplit(key, '.');
  for (size_t i = 0; i < parts.size(); ++i) {
    const std::string& part = parts[i];
    const bool last = i + 1 == parts.size();
    if (node->is_array()) {
      size_t index;
      if (!absl::SimpleAtoi(part, &index) || index >= node->size()) {
        return absl::InvalidArgumentError(
            absl::StrCat("override ", key, ": bad array index '", part, "'"));
      }
      node = &(*node)[index];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) {
        return absl::InvalidArgumentError(
            absl::StrCat("override ", key, ": '", part,
                         "' is inside a non-object value"));
      }
      node = &(*node)[part];
    }
    if (last) *node = value;
  }
  return absl::OkStatus();
}

uint64_t ConfigHash(const ExperimentConfig& config) {
  json j = ToJson(config);
  j.erase("output_dir");
  j.erase("transport");
  const std::string text = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

absl::StatusOr<FederationSetup> BuildSetup(const ExperimentConfig& config) {
  FederationSetup setup;
  setup.spec = config.model;
  setup.schedule = config.schedule;
  setup.secure_aggregation = config.secure_aggregation;
  setup.fixed_point_bits = config.fixed_point_bits;
  setup.seed = config.seed;
  setup.averaging = config.averaging;
  setup.tracked_indices = config.tracked_parameters;
  setup.policy.kind = config.policy.kind;

  const int d = config.model.feature_dim;
  const int k = config.model.class_count;
  constexpr uint64_t kSynth = static_cast<uint64_t>(SeedTag::kSynthesize);
  std::vector<Dataset> tests;
  uint32_t next_id = 0;
  for (size_t di = 0; di < config.domains.size(); ++di) {
    const DomainConfig& domain = config.domains[di];
    const std::string path = absl::StrCat("data.domains.", di);
    Dataset train, test;
    if (domain.csv.has_value()) {
      std::vector<std::string> train_labels, test_labels;
      auto tr = LoadCsv(domain.csv->train_path, domain.csv->schema,
                        &train_labels);
      if (!tr.ok()) return KeyError(Join(path, "csv.train"), tr.status().message());
      auto te = LoadCsv(domain.csv->test_path, domain.csv->schema,
                        &test_labels);
      if (!te.ok()) return KeyError(Join(path, "csv.test"), te.status().message());
      if (train_labels != test_labels) {
        spdlog::warn("{}: train and test CSVs have different label sets; "
                     "indices follow each file's own sorted labels",
                     path);
      }
      train = std::move(*tr);
      test = std::move(*te);
      if (train.feature_dim() != d) {
        return KeyError(Join(path, "csv.feature_columns"),
                        absl::StrCat("has ", train.feature_dim(),
                                     " columns, model.feature_dim is ", d));
      }
      if (train.class_count > k || test.class_count > k) {
        return KeyError(Join(path, "csv.label_column"),
                        absl::StrCat("more distinct labels than "
                                     "model.class_count = ", k));
      }
      train.class_count = test.class_count = k;
    } else {
      DomainRecipe recipe;
      if (domain.custom.has_value()) {
        recipe.domain_id = domain.tag;
        for (const auto& m : domain.custom->class_means) {
          recipe.class_means.push_back(
              Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
        }
        recipe.class_covariance_scale = domain.custom->class_covariance_scale;
        recipe.mean_shift =
            domain.custom->mean_shift.empty()
                ? Eigen::VectorXd::Zero(d).eval()
                : Eigen::Map<const Eigen::VectorXd>(
                      domain.custom->mean_shift.data(),
                      domain.custom->mean_shift.size())
                      .eval();
        recipe.label_prior = domain.custom->label_prior;
        if (recipe.label_prior.empty()) recipe.label_prior.assign(k, 1.0 / k);
        if (absl::Status s = ValidateRecipe(recipe, d, k); !s.ok()) {
          return KeyError(Join(path, "custom"), s.message());
        }
      } else {
        auto builtin = BuiltinRecipe(domain.recipe, d, k);
        if (!builtin.ok()) {
          return KeyError(Join(path, "recipe"), builtin.status().message());
        }
        recipe = std::move(*builtin);
      }
      auto tr = Synthesize(recipe, domain.train_samples,
                           DeriveSeed(config.seed, {kSynth, di, 0}));
      if (!tr.ok()) return KeyError(path, tr.status().message());
      auto te = Synthesize(recipe, domain.test_samples,
                           DeriveSeed(config.seed, {kSynth, di, 1}));
      if (!te.ok()) return KeyError(path, te.status().message());
      train = std::move(*tr);
      test = std::move(*te);
    }

    PartitionPlan plan;
    plan.client_count = domain.clients;
    plan.scheme = config.partition_scheme;
    plan.dirichlet_alpha = config.dirichlet_alpha;
    plan.min_samples_per_client = config.min_samples_per_client;
    plan.seed = DeriveSeed(config.seed,
                           {static_cast<uint64_t>(SeedTag::kPartition), di});
    auto shards = Partition(train, plan);
    if (!shards.ok()) return KeyError(path, shards.status().message());
    for (Dataset& shard : *shards) {
      ClientState client;
      client.client_id = next_id++;
      client.domain_tag = domain.tag;
      client.local_data = std::move(shard);
      auto override_it = config.privacy_overrides.find(client.client_id);
      client.budget = override_it == config.privacy_overrides.end()
                          ? config.privacy
                          : override_it->second;
      setup.clients.push_back(std::move(client));
    }
    tests.push_back(test);
    setup.domain_tests.push_back({domain.tag, std::move(test)});
  }
  setup.pooled_test = Concatenate(tests);

  if (config.policy.kind == PolicyKind::kCustomWeighted) {
    setup.policy.weights =
        config.policy.derive_from_privacy
            ? DerivePrivacyWeights(setup.clients, config.policy.epsilon_cap)
            : config.policy.weights;
  }
  if (absl::Status s = ValidateSetup(setup); !s.ok()) return s;
  return setup;
}

}  // namespace fedmesh
