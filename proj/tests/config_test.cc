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
#include <random>

#include "gtest/gtest.h"

namespace fedmesh {
namespace {

using nlohmann::json;

json Minimal() {
  return json::parse(R"({
    "data": {"domains": [{"recipe": "medical", "train_samples": 100,
                          "test_samples": 50, "clients": 2},
                         {"recipe": "user", "train_samples": 80,
                          "test_samples": 40}]}
  })");
}

std::string ErrorOf(const json& doc) {
  auto c = ParseConfig(doc);
  EXPECT_FALSE(c.ok());
  return std::string(c.status().message());
}

TEST(ConfigTest, DefaultsFillEverythingButDomains) {
  auto c = ParseConfig(Minimal());
  ASSERT_TRUE(c.ok()) << c.status();
  EXPECT_EQ(c->client_count(), 3);
  EXPECT_EQ(c->domains[0].tag, "medical");
  EXPECT_EQ(c->domains[1].clients, 1);
  EXPECT_EQ(c->schedule.rounds, 100);
  EXPECT_EQ(c->tracked_parameters, (std::vector<int>{0, 4}));
  EXPECT_FALSE(c->privacy.enabled);
  EXPECT_EQ(c->seed, 42u);
}

TEST(ConfigTest, CanonicalFormRoundTrips) {
  json doc = Minimal();
  doc["privacy"] = {{"enabled", true}, {"epsilon", 0.7},
                    {"clients", {{"1", {{"epsilon", 2.0}}}}}};
  doc["policy"] = {{"kind", "custom_weighted"},
                   {"weights", {{"0", 1.0}, {"1", 0.5}, {"2", 2.0}}}};
  doc["schedule"] = {{"batch_size", 16}, {"learning_rate", 0.3}};
  doc["seed"] = 18446744073709551615ULL;
  doc["eval"] = {{"averaging", "micro"}, {"tracked_parameters", {1, 2, 3}}};
  doc["data"]["domains"][1]["custom"] = {
      {"class_means", {{0, 0, 0, 0}, {1, 1, 1, 1}, {2, 2, 2, 2}}},
      {"class_covariance_scale", 0.5}};
  auto first = ParseConfig(doc);
  ASSERT_TRUE(first.ok()) << first.status();
  const json canonical = ToJson(*first);
  auto second = ParseConfig(json::parse(canonical.dump()));
  ASSERT_TRUE(second.ok()) << second.status();
  EXPECT_EQ(*first, *second);
  EXPECT_EQ(ToJson(*second).dump(), canonical.dump());
  EXPECT_EQ(second->privacy_overrides.at(1).epsilon, 2.0);
  EXPECT_TRUE(second->privacy_overrides.at(1).enabled);
  EXPECT_EQ(second->seed, 18446744073709551615ULL);
}

TEST(ConfigTest, BundledConfigRoundTrips) {
  auto doc = ReadConfigJson(std::string(FEDMESH_SOURCE_DIR) +
                            "/configs/three_domains.cfg");
  ASSERT_TRUE(doc.ok()) << doc.status();
  auto c = ParseConfig(*doc);
  ASSERT_TRUE(c.ok()) << c.status();
  EXPECT_EQ(c->domains.size(), 3u);
  EXPECT_EQ(*ParseConfig(ToJson(*c)), *c);
}

TEST(ConfigTest, RandomConfigsRoundTrip) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    json doc = Minimal();
    std::uniform_real_distribution<double> u(0.01, 1.0);
    doc["schedule"] = {{"rounds", 1 + gen() % 500},
                       {"learning_rate", u(gen)},
                       {"lr_decay", u(gen)},
                       {"participation_fraction", u(gen)}};
    doc["privacy"] = {{"enabled", gen() % 2 == 0}, {"epsilon", 10 * u(gen)},
                      {"delta", u(gen) * 1e-3}, {"clip_norm", u(gen)}};
    doc["model"] = {{"feature_dim", 1 + gen() % 8}, {"l2", u(gen)}};
    doc["seed"] = gen();
    auto c = ParseConfig(doc);
    ASSERT_TRUE(c.ok()) << c.status();
    auto again = ParseConfig(json::parse(ToJson(*c).dump()));
    ASSERT_TRUE(again.ok());
    EXPECT_EQ(*again, *c);
  }
}

TEST(ConfigTest, ErrorsNameTheOffendingKey) {
  json doc = Minimal();
  doc["schedule"] = {{"learning_rate", -1.0}};
  EXPECT_NE(ErrorOf(doc).find("schedule.learning_rate"), std::string::npos);

  doc = Minimal();
  doc["schedule"] = {{"learnig_rate", 0.1}};
  EXPECT_NE(ErrorOf(doc).find("schedule.learnig_rate: unknown key"),
            std::string::npos);

  doc = Minimal();
  doc["data"]["domains"][1]["recipe"] = "retail";
  EXPECT_NE(ErrorOf(doc).find("data.domains.1.recipe"), std::string::npos);

  doc = Minimal();
  doc["data"]["domains"][0]["clients"] = 0;
  EXPECT_NE(ErrorOf(doc).find("data.domains.0.clients"), std::string::npos);

  doc = Minimal();
  doc["privacy"] = {{"delta", 2.0}};
  EXPECT_NE(ErrorOf(doc).find("privacy.delta"), std::string::npos);

  doc = Minimal();
  doc["privacy"] = {{"clients", {{"7", {{"epsilon", 1.0}}}}}};
  EXPECT_NE(ErrorOf(doc).find("privacy.clients.7"), std::string::npos);

  doc = Minimal();
  doc["policy"] = {{"kind", "custom_weighted"}, {"weights", {{"0", 1.0}}}};
  EXPECT_NE(ErrorOf(doc).find("policy.weights"), std::string::npos);

  doc = Minimal();
  doc["eval"] = {{"tracked_parameters", {15}}};
  EXPECT_NE(ErrorOf(doc).find("eval.tracked_parameters"), std::string::npos);

  doc = Minimal();
  doc["model"] = {{"class_count", "three"}};
  EXPECT_NE(ErrorOf(doc).find("model.class_count"), std::string::npos);

  doc = Minimal();
  doc["data"]["domains"][1]["tag"] = "medical";
  EXPECT_NE(ErrorOf(doc).find("duplicate domain tag"), std::string::npos);

  EXPECT_NE(ErrorOf(json::parse(R"({"model": {}})")).find("data"),
            std::string::npos);
  EXPECT_FALSE(ParseConfigText("{ not json").ok());
}

TEST(ConfigTest, OverridesEditNestedKeys) {
  json doc = Minimal();
  ASSERT_TRUE(ApplyOverride(doc, "privacy.enabled=true").ok());
  ASSERT_TRUE(ApplyOverride(doc, "schedule.rounds=7").ok());
  ASSERT_TRUE(ApplyOverride(doc, "data.domains.1.tag=behaviour").ok());
  ASSERT_TRUE(ApplyOverride(doc, "eval.tracked_parameters=[1,2]").ok());
  auto c = ParseConfig(doc);
  ASSERT_TRUE(c.ok()) << c.status();
  EXPECT_TRUE(c->privacy.enabled);
  EXPECT_EQ(c->schedule.rounds, 7);
  EXPECT_EQ(c->domains[1].tag, "behaviour");
  EXPECT_EQ(c->tracked_parameters, (std::vector<int>{1, 2}));
  EXPECT_FALSE(ApplyOverride(doc, "no_equals_sign").ok());
  EXPECT_FALSE(ApplyOverride(doc, "data.domains.9.tag=x").ok());
  EXPECT_FALSE(ApplyOverride(doc, "schedule.rounds.inner=1").ok());
}

TEST(ConfigTest, HashIgnoresOutputAndTransportOnly) {
  ExperimentConfig a = *ParseConfig(Minimal());
  ExperimentConfig b = a;
  b.output_dir = "elsewhere";
  b.address = "127.0.0.1:9";
  b.timeout_seconds = 3;
  EXPECT_EQ(ConfigHash(a), ConfigHash(b));
  b.seed = 43;
  EXPECT_NE(ConfigHash(a), ConfigHash(b));
  ExperimentConfig c = a;
  c.privacy.epsilon = 0.5;
  EXPECT_NE(ConfigHash(a), ConfigHash(c));
}

TEST(ConfigTest, BuildSetupAssignsClientsAndIsDeterministic) {
  json doc = Minimal();
  doc["privacy"] = {{"enabled", true},
                    {"clients", {{"2", {{"enabled", false}}}}}};
  ExperimentConfig config = *ParseConfig(doc);
  auto a = BuildSetup(config);
  auto b = BuildSetup(config);
  ASSERT_TRUE(a.ok()) << a.status();
  ASSERT_EQ(a->clients.size(), 3u);
  EXPECT_EQ(a->clients[0].domain_tag, "medical");
  EXPECT_EQ(a->clients[2].domain_tag, "user");
  EXPECT_EQ(a->clients[0].local_data.size() + a->clients[1].local_data.size(),
            100);
  EXPECT_TRUE(a->clients[0].budget.enabled);
  EXPECT_FALSE(a->clients[2].budget.enabled);
  EXPECT_EQ(a->domain_tests.size(), 2u);
  EXPECT_EQ(a->pooled_test.size(), 90);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a->clients[i].local_data, b->clients[i].local_data);
  }
  config.seed = 1;
  auto c = BuildSetup(config);
  EXPECT_FALSE(c->clients[0].local_data == a->clients[0].local_data);
}

TEST(ConfigTest, PrivacyDerivedPolicy) {
  json doc = Minimal();
  doc["policy"] = {{"kind", "custom_weighted"}, {"derive_from_privacy", true}};
  doc["privacy"] = {{"enabled", true}, {"epsilon", 8.0},
                    {"clients", {{"0", {{"epsilon", 1.0}}}}}};
  auto setup = BuildSetup(*ParseConfig(doc));
  ASSERT_TRUE(setup.ok()) << setup.status();
  const auto& w = setup->policy.weights;
  ASSERT_EQ(w.size(), 3u);
  const double n0 = setup->clients[0].local_data.size();
  const double n1 = setup->clients[1].local_data.size();
  const double n2 = setup->clients[2].local_data.size();
  const double total = n0 / 8.0 + n1 + n2;
  EXPECT_NEAR(w.at(0), n0 / 8.0 / total, 1e-15);
  EXPECT_NEAR(w.at(2), n2 / total, 1e-15);
}

TEST(ConfigTest, CsvDomains) {
  const std::string dir = ::testing::TempDir();
  {
    std::ofstream train(dir + "/cfg_train.csv");
    train << "x1,x2,y\n";
    for (int i = 0; i < 40; ++i) {
      train << i * 0.1 << ',' << -i * 0.2 << ',' << (i % 2 ? "b" : "a")
            << '\n';
    }
    std::ofstream test(dir + "/cfg_test.csv");
    test << "x1,x2,y\n0,0,a\n1,1,b\n";
  }
  json doc = json::parse(R"({"model": {"feature_dim": 2, "class_count": 2},
      "data": {"domains": [{"tag": "clinic", "clients": 2,
        "csv": {"feature_columns": ["x1", "x2"], "label_column": "y"}}]}})");
  doc["data"]["domains"][0]["csv"]["train"] = dir + "/cfg_train.csv";
  doc["data"]["domains"][0]["csv"]["test"] = dir + "/cfg_test.csv";
  auto config = ParseConfig(doc);
  ASSERT_TRUE(config.ok()) << config.status();
  EXPECT_EQ(config->domains[0].recipe, "csv");
  auto setup = BuildSetup(*config);
  ASSERT_TRUE(setup.ok()) << setup.status();
  EXPECT_EQ(setup->clients.size(), 2u);
  EXPECT_EQ(setup->pooled_test.size(), 2);

  doc["model"]["feature_dim"] = 3;
  doc["eval"] = {{"tracked_parameters", {0}}};
  auto wrong = BuildSetup(*ParseConfig(doc));
  ASSERT_FALSE(wrong.ok());
  EXPECT_NE(wrong.status().message().find("csv.feature_columns"),
            absl::string_view::npos);
}

}  // namespace
}  // namespace fedmesh
