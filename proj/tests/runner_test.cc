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

#include "fedmesh/runner.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "fedmesh/transport.h"
#include "gtest/gtest.h"

namespace fedmesh {
namespace {

namespace fs = std::filesystem;

const std::string kBundled =
    std::string(FEDMESH_SOURCE_DIR) + "/configs/three_domains.cfg";

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> Lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

fs::path FreshDir(const std::string& name) {
  fs::path dir = fs::path(::testing::TempDir()) / ("fedmesh_runner_" + name);
  fs::remove_all(dir);
  return dir;
}

CommandOptions Options(const fs::path& out,
                       std::vector<std::string> overrides = {}) {
  CommandOptions o;
  o.config_path = kBundled;
  o.out_dir = out.string();
  o.overrides = std::move(overrides);
  return o;
}

double FinalAccuracy(const fs::path& metrics) {
  const auto lines = Lines(metrics);
  const std::string& last = lines.back();
  const size_t a = last.find(',');
  return std::stod(last.substr(a + 1, last.find(',', a + 1) - a - 1));
}

TEST(RunnerTest, SimulateWritesDocumentedArtifacts) {
  const fs::path dir = FreshDir("sim");
  ASSERT_EQ(CmdSimulate(Options(dir, {"schedule.rounds=12"})), kExitOk);
  for (const char* name : {"loss_curves.csv", "param_trace.csv",
                           "metrics.csv", "clients.csv", "final_model.csv",
                           "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  auto loss = Lines(dir / "loss_curves.csv");
  EXPECT_EQ(loss[0], "round,domain,loss");
  EXPECT_EQ(loss.size(), 1 + 12 * 3u);
  auto metrics = Lines(dir / "metrics.csv");
  EXPECT_EQ(metrics[0], "round,accuracy,precision,recall,f1");
  EXPECT_EQ(metrics.size(), 13u);
  auto trace = Lines(dir / "param_trace.csv");
  EXPECT_EQ(trace[0], "round,domain_eval_tag,index,value");
  // Two tracked indices for the global model and each of three domains.
  EXPECT_EQ(trace.size(), 1 + 12 * 2 * 4u);
  EXPECT_EQ(Lines(dir / "final_model.csv").size(), 1 + 15u);
  auto manifest = nlohmann::json::parse(Slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "completed");
  EXPECT_EQ(manifest["files"].size(), 5u);
  EXPECT_FALSE(fs::exists(dir / "manifest.json.tmp"));
}

TEST(RunnerTest, SimulateIsByteDeterministic) {
  const fs::path a = FreshDir("det_a"), b = FreshDir("det_b");
  ASSERT_EQ(CmdSimulate(Options(a, {"schedule.rounds=15"})), kExitOk);
  ASSERT_EQ(CmdSimulate(Options(b, {"schedule.rounds=15"})), kExitOk);
  for (const char* name : {"loss_curves.csv", "param_trace.csv",
                           "metrics.csv", "clients.csv", "final_model.csv"}) {
    EXPECT_EQ(Slurp(a / name), Slurp(b / name)) << name;
  }
}

TEST(RunnerTest, RefusesNonEmptyOutputWithoutForce) {
  const fs::path dir = FreshDir("force");
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "x";
  CommandOptions o = Options(dir, {"schedule.rounds=2"});
  EXPECT_EQ(CmdSimulate(o), kExitConfigError);
  EXPECT_EQ(Slurp(dir / "keep.txt"), "x");
  o.force = true;
  EXPECT_EQ(CmdSimulate(o), kExitOk);
}

TEST(RunnerTest, ConfigErrorsExitOne) {
  const fs::path dir = FreshDir("bad");
  EXPECT_EQ(CmdSimulate(Options(dir, {"schedule.learning_rate=-1"})),
            kExitConfigError);
  EXPECT_EQ(CmdValidate(Options(dir, {"data.domains.0.clients=0"})),
            kExitConfigError);
  EXPECT_EQ(CmdServe(Options(dir, {"data.domains.0.clients=0"})),
            kExitConfigError);
  CommandOptions missing = Options(dir);
  missing.config_path = "/nonexistent/config.cfg";
  EXPECT_EQ(CmdSimulate(missing), kExitConfigError);
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_EQ(CmdValidate(Options(dir)), kExitOk);
}

TEST(RunnerTest, DivergenceExitsTwo) {
  const fs::path dir = FreshDir("diverge");
  EXPECT_EQ(CmdSimulate(Options(dir, {"schedule.rounds=3",
                                      "schedule.learning_rate=1e308",
                                      "secure_aggregation.enabled=true"})),
            kExitRuntimeAbort);
  auto manifest = nlohmann::json::parse(Slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "aborted");
}

TEST(RunnerTest, SeedFlagChangesTheRun) {
  const fs::path a = FreshDir("seed_a"), b = FreshDir("seed_b");
  CommandOptions oa = Options(a, {"schedule.rounds=3"});
  CommandOptions ob = Options(b, {"schedule.rounds=3"});
  ob.seed = 7;
  ASSERT_EQ(CmdSimulate(oa), kExitOk);
  ASSERT_EQ(CmdSimulate(ob), kExitOk);
  EXPECT_NE(Slurp(a / "final_model.csv"), Slurp(b / "final_model.csv"));
}

TEST(RunnerTest, SingleClientBaselineMatchesFederation) {
  const std::vector<std::string> one = {
      "data.domains=[{\"recipe\":\"medical\",\"clients\":1}]",
      "schedule.rounds=20"};
  const fs::path fed = FreshDir("one_fed"), base = FreshDir("one_base");
  ASSERT_EQ(CmdSimulate(Options(fed, one)), kExitOk);
  ASSERT_EQ(CmdBaseline(Options(base, one)), kExitOk);
  EXPECT_EQ(Slurp(fed / "metrics.csv"), Slurp(base / "baseline_metrics.csv"));
  EXPECT_EQ(Slurp(fed / "final_model.csv"),
            Slurp(base / "baseline_final_model.csv"));
}

TEST(RunnerTest, IidFederationTracksPooledBaseline) {
  const fs::path fed = FreshDir("iid_fed"), base = FreshDir("iid_base");
  ASSERT_EQ(CmdSimulate(Options(fed)), kExitOk);
  ASSERT_EQ(CmdBaseline(Options(base)), kExitOk);
  EXPECT_LE(std::abs(FinalAccuracy(fed / "metrics.csv") -
                     FinalAccuracy(base / "baseline_metrics.csv")),
            0.03);
}

TEST(RunnerTest, NoiseDoesNotHelp) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path dp = FreshDir("dp"), clean = FreshDir("clean");
    CommandOptions with = Options(dp, {"privacy.enabled=true"});
    CommandOptions without = Options(clean, {"privacy.enabled=false"});
    with.seed = without.seed = seed;
    ASSERT_EQ(CmdSimulate(with), kExitOk);
    ASSERT_EQ(CmdSimulate(without), kExitOk);
    EXPECT_LE(FinalAccuracy(dp / "metrics.csv"),
              FinalAccuracy(clean / "metrics.csv") + 0.05)
        << "seed " << seed;
  }
}

uint16_t FreePort() {
  auto l = Listener::Bind({"127.0.0.1", 0});
  return l->port();
}

TEST(RunnerTest, ServeAndJoinReproduceSimulate) {
  const std::vector<std::string> overrides = {
      "schedule.rounds=6", "secure_aggregation.enabled=true",
      "transport.timeout_seconds=10"};
  const fs::path sim = FreshDir("xs_sim"), srv = FreshDir("xs_srv");
  ASSERT_EQ(CmdSimulate(Options(sim, overrides)), kExitOk);
  const std::string addr = "127.0.0.1:" + std::to_string(FreePort());
  CommandOptions serve = Options(srv, overrides);
  serve.listen = addr;
  int serve_code = -1;
  std::thread server([&] { serve_code = CmdServe(serve); });
  std::vector<int> codes(3, -1);
  std::vector<std::thread> clients;
  for (uint32_t id = 0; id < 3; ++id) {
    clients.emplace_back([&, id] {
      CommandOptions join = Options(srv, overrides);
      join.out_dir.reset();
      join.server = addr;
      join.client_id = id;
      codes[id] = CmdJoin(join);
    });
  }
  for (auto& t : clients) t.join();
  server.join();
  EXPECT_EQ(serve_code, kExitOk);
  for (int c : codes) EXPECT_EQ(c, kExitOk);
  for (const char* name : {"loss_curves.csv", "param_trace.csv",
                           "metrics.csv", "clients.csv", "final_model.csv"}) {
    EXPECT_EQ(Slurp(sim / name), Slurp(srv / name)) << name;
  }
}

TEST(RunnerTest, JoinWithDifferentConfigExitsThree) {
  const fs::path srv = FreshDir("mismatch");
  const std::string addr = "127.0.0.1:" + std::to_string(FreePort());
  CommandOptions serve =
      Options(srv, {"data.domains=[{\"recipe\":\"user\",\"clients\":1}]",
                    "transport.timeout_seconds=10"});
  serve.listen = addr;
  int serve_code = -1;
  std::thread server([&] { serve_code = CmdServe(serve); });
  CommandOptions join =
      Options(srv, {"data.domains=[{\"recipe\":\"user\",\"clients\":1}]",
                    "schedule.rounds=99", "transport.timeout_seconds=10"});
  join.server = addr;
  join.client_id = 0;
  EXPECT_EQ(CmdJoin(join), kExitConfigMismatch);
  server.join();
  EXPECT_EQ(serve_code, kExitConfigMismatch);

  CommandOptions stranger = join;
  stranger.client_id = 5;
  EXPECT_EQ(CmdJoin(stranger), kExitConfigError);
}

}  // namespace
}  // namespace fedmesh
