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

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "fedmesh/federation.h"
#include "fedmesh/text.h"
#include "fedmesh/transport.h"
#include "logging.h"

namespace fedmesh {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string UtcNow() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string HashHex(uint64_t h) { return absl::StrFormat("%016x", h); }

const char* MechanismName(NoiseMechanism m) {
  return m == NoiseMechanism::kGaussian ? "gaussian" : "none";
}

// Collects CSV files in memory and writes them, plus the manifest, into one
// directory.
class ArtifactSet {
 public:
  ArtifactSet(fs::path dir, std::string command, uint64_t config_hash)
      : dir_(std::move(dir)),
        command_(std::move(command)),
        config_hash_(config_hash),
        started_(UtcNow()) {}

  std::ostringstream& File(const std::string& name, std::string_view header) {
    auto [it, inserted] = files_.try_emplace(name);
    if (inserted) it->second << header << '\n';
    return it->second;
  }

  absl::Status Write(std::string_view status) const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
      return absl::InternalError(
          absl::StrCat("cannot create ", dir_.string(), ": ", ec.message()));
    }
    json inventory = json::array();
    for (const auto& [name, body] : files_) {
      const std::string text = body.str();
      if (absl::Status s = WriteAtomically(dir_ / name, text); !s.ok()) {
        return s;
      }
      int64_t rows = -1;  // header excluded
      for (char c : text) rows += c == '\n';
      inventory.push_back({{"name", name},
                           {"bytes", text.size()},
                           {"rows", rows}});
    }
    json manifest{{"artifact_version", kArtifactVersion},
                  {"command", command_},
                  {"config_hash", HashHex(config_hash_)},
                  {"started_at", started_},
                  {"finished_at", UtcNow()},
                  {"status", status},
                  {"files", inventory}};
    return WriteAtomically(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  static absl::Status WriteAtomically(const fs::path& path,
                                      const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
      if (!out) {
        return absl::InternalError(
            absl::StrCat("cannot write ", tmp.string()));
      }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
      return absl::InternalError(absl::StrCat("cannot rename ", tmp.string(),
                                              ": ", ec.message()));
    }
    return absl::OkStatus();
  }

  fs::path dir_;
  std::string command_;
  uint64_t config_hash_;
  std::string started_;
  std::map<std::string, std::ostringstream> files_;
};

constexpr char kLossHeader[] = "round,domain,loss";
constexpr char kTraceHeader[] = "round,domain_eval_tag,index,value";
constexpr char kMetricsHeader[] = "round,accuracy,precision,recall,f1";
constexpr char kClientsHeader[] =
    "round,client_id,domain,participated,flagged,sample_count,coefficient,"
    "loss_before,loss_after,dp_enabled,epsilon,delta,clip_norm,mechanism,"
    "sigma,clip_applied,pre_clip_norm";
constexpr char kModelHeader[] = "index,value";

void AppendMetrics(std::ostringstream& out, const RoundReport& r) {
  out << r.round << ',' << FormatDouble(r.metrics.accuracy) << ','
      << FormatDouble(r.metrics.precision) << ','
      << FormatDouble(r.metrics.recall) << ',' << FormatDouble(r.metrics.f1)
      << '\n';
}

void AppendLosses(std::ostringstream& out, const RoundReport& r) {
  for (const DomainLoss& l : r.domain_losses) {
    out << r.round << ',' << l.domain << ',' << FormatDouble(l.loss) << '\n';
  }
}

void AppendReport(ArtifactSet& artifacts, const RoundReport& r,
                  std::span<const int> tracked) {
  AppendLosses(artifacts.File("loss_curves.csv", kLossHeader), r);
  AppendMetrics(artifacts.File("metrics.csv", kMetricsHeader), r);
  auto& trace = artifacts.File("param_trace.csv", kTraceHeader);
  for (size_t k = 0; k < tracked.size(); ++k) {
    trace << r.round << ",global," << tracked[k] << ','
          << FormatDouble(r.global_trace[k]) << '\n';
  }
  for (const DomainTrace& d : r.domain_traces) {
    for (size_t k = 0; k < tracked.size(); ++k) {
      trace << r.round << ',' << d.domain << ',' << tracked[k] << ','
            << FormatDouble(d.values[k]) << '\n';
    }
  }
  auto& clients = artifacts.File("clients.csv", kClientsHeader);
  for (const ClientRecord& c : r.clients) {
    clients << r.round << ',' << c.client_id << ',' << c.domain << ','
            << int{c.participated} << ',' << int{c.flagged} << ','
            << c.sample_count << ',' << FormatDouble(c.coefficient) << ','
            << FormatDouble(c.loss_before) << ','
            << FormatDouble(c.loss_after) << ',' << int{c.budget.enabled}
            << ',' << FormatDouble(c.budget.epsilon) << ','
            << FormatDouble(c.budget.delta) << ','
            << FormatDouble(c.budget.clip_norm) << ','
            << MechanismName(c.receipt.mechanism) << ','
            << FormatDouble(c.receipt.sigma) << ','
            << int{c.receipt.clip_applied} << ','
            << FormatDouble(c.receipt.pre_clip_norm) << '\n';
  }
}

void AppendModel(ArtifactSet& artifacts, const std::string& name,
                 const ParamVector& theta) {
  auto& out = artifacts.File(name, kModelHeader);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    out << i << ',' << FormatDouble(theta[i]) << '\n';
  }
}

// Refuses to reuse a directory with content unless forced.
absl::Status CheckOutputDir(const std::string& dir, bool force) {
  std::error_code ec;
  if (!fs::exists(dir, ec)) return absl::OkStatus();
  if (!fs::is_directory(dir, ec)) {
    return absl::InvalidArgumentError(
        absl::StrCat("output_dir: ", dir, " exists and is not a directory"));
  }
  if (!force && !fs::is_empty(dir, ec)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "output_dir: ", dir, " is not empty (pass --force to overwrite)"));
  }
  return absl::OkStatus();
}

struct Prepared {
  ExperimentConfig config;
  FederationSetup setup;
  uint64_t hash = 0;
};

// Loads and validates everything that must be checked before compute. On
// failure, returns the exit code.
std::variant<Prepared, int> Prepare(const CommandOptions& options,
                                    bool writes_output) {
  auto config = LoadExperiment(options);
  if (!config.ok()) {
    spdlog::error("config error: {}", config.status().message());
    return kExitConfigError;
  }
  if (writes_output) {
    if (absl::Status s = CheckOutputDir(config->output_dir, options.force);
        !s.ok()) {
      spdlog::error("{}", s.message());
      return kExitConfigError;
    }
  }
  auto setup = BuildSetup(*config);
  if (!setup.ok()) {
    spdlog::error("config error: {}", setup.status().message());
    return kExitConfigError;
  }
  Prepared p;
  p.hash = ConfigHash(*config);
  p.config = std::move(*config);
  p.setup = std::move(*setup);
  return p;
}

int Finish(const ArtifactSet& artifacts, const absl::Status& run) {
  if (absl::Status s = artifacts.Write(run.ok() ? "completed" : "aborted");
      !s.ok()) {
    spdlog::error("{}", s.message());
    return kExitRuntimeAbort;
  }
  if (!run.ok()) {
    spdlog::error("run aborted: {}", run.message());
    return kExitRuntimeAbort;
  }
  return kExitOk;
}

}  // namespace

absl::StatusOr<ExperimentConfig> LoadExperiment(const CommandOptions& options) {
  if (options.config_path.empty()) {
    return absl::InvalidArgumentError("--config is required");
  }
  auto doc = ReadConfigJson(options.config_path);
  if (!doc.ok()) return doc.status();
  for (const std::string& assignment : options.overrides) {
    if (absl::Status s = ApplyOverride(*doc, assignment); !s.ok()) return s;
  }
  auto config = ParseConfig(*doc);
  if (!config.ok()) return config.status();
  if (options.seed.has_value()) config->seed = *options.seed;
  if (options.out_dir.has_value()) config->output_dir = *options.out_dir;
  return config;
}

int CmdValidate(const CommandOptions& options) {
  auto prepared = Prepare(options, /*writes_output=*/false);
  if (auto* code = std::get_if<int>(&prepared)) return *code;
  const Prepared& p = std::get<Prepared>(prepared);
  std::printf("ok: %d clients across %zu domains, %d parameters, hash %s\n",
              p.config.client_count(), p.config.domains.size(),
              ParamDim(p.config.model), HashHex(p.hash).c_str());
  return kExitOk;
}

int CmdSimulate(const CommandOptions& options) {
  auto prepared = Prepare(options, /*writes_output=*/true);
  if (auto* code = std::get_if<int>(&prepared)) return *code;
  Prepared& p = std::get<Prepared>(prepared);
  ArtifactSet artifacts(p.config.output_dir, "simulate", p.hash);
  const std::vector<int> tracked = p.config.tracked_parameters;
  FederationState state = InitialState(std::move(p.setup));
  InProcessDriver driver(state.setup);
  absl::Status run = RunExperiment(state, driver, [&](const RoundReport& r) {
    AppendReport(artifacts, r, tracked);
    spdlog::info("round {} accuracy {:.4f}", r.round, r.metrics.accuracy);
  });
  AppendModel(artifacts, "final_model.csv", state.theta);
  return Finish(artifacts, run);
}

int CmdBaseline(const CommandOptions& options) {
  auto prepared = Prepare(options, /*writes_output=*/true);
  if (auto* code = std::get_if<int>(&prepared)) return *code;
  Prepared& p = std::get<Prepared>(prepared);
  ArtifactSet artifacts(p.config.output_dir, "baseline", p.hash);
  ParamVector theta;
  auto reports = RunCentralized(p.setup, &theta);
  if (!reports.ok()) return Finish(artifacts, reports.status());
  for (const RoundReport& r : *reports) {
    AppendMetrics(artifacts.File("baseline_metrics.csv", kMetricsHeader), r);
    AppendLosses(artifacts.File("baseline_loss_curves.csv", kLossHeader), r);
  }
  AppendModel(artifacts, "baseline_final_model.csv", theta);
  return Finish(artifacts, absl::OkStatus());
}

int CmdServe(const CommandOptions& options) {
  auto prepared = Prepare(options, /*writes_output=*/true);
  if (auto* code = std::get_if<int>(&prepared)) return *code;
  Prepared& p = std::get<Prepared>(prepared);
  auto endpoint = ParseEndpoint(options.listen.value_or(p.config.address));
  if (!endpoint.ok()) {
    spdlog::error("config error: --listen: {}", endpoint.status().message());
    return kExitConfigError;
  }
  auto listener = Listener::Bind(*endpoint);
  if (!listener.ok()) {
    spdlog::error("{}", listener.status().message());
    return kExitRuntimeAbort;
  }
  spdlog::info("listening on {}:{} for {} clients", endpoint->host,
               listener->port(), p.setup.clients.size());
  const auto timeout = std::chrono::milliseconds(
      static_cast<int64_t>(p.config.timeout_seconds * 1000.0));
  SocketServerDriver driver(std::move(*listener), timeout);
  std::map<uint32_t, int64_t> sample_counts;
  for (const ClientState& c : p.setup.clients) {
    sample_counts[c.client_id] = c.local_data.size();
  }
  if (absl::Status s = driver.AcceptClients(sample_counts, p.hash); !s.ok()) {
    spdlog::error("handshake failed: {}", s.message());
    driver.Finish(ByeReason::kHalted, std::string(s.message()));
    return absl::IsFailedPrecondition(s) ? kExitConfigMismatch
                                         : kExitRuntimeAbort;
  }

  ArtifactSet artifacts(p.config.output_dir, "serve", p.hash);
  const std::vector<int> tracked = p.config.tracked_parameters;
  FederationState state = InitialState(std::move(p.setup));
  absl::Status run = RunExperiment(state, driver, [&](const RoundReport& r) {
    AppendReport(artifacts, r, tracked);
    driver.BroadcastReport(r.round, r.metrics);
    spdlog::info("round {} accuracy {:.4f}", r.round, r.metrics.accuracy);
  });
  if (run.ok()) {
    driver.Finish(ByeReason::kDone, "experiment complete");
  } else {
    driver.Finish(ByeReason::kHalted, std::string(run.message()));
  }
  AppendModel(artifacts, "final_model.csv", state.theta);
  return Finish(artifacts, run);
}

int CmdJoin(const CommandOptions& options) {
  if (!options.client_id.has_value()) {
    spdlog::error("config error: --client-id is required");
    return kExitConfigError;
  }
  auto prepared = Prepare(options, /*writes_output=*/false);
  if (auto* code = std::get_if<int>(&prepared)) return *code;
  const Prepared& p = std::get<Prepared>(prepared);
  const ClientState* me = nullptr;
  for (const ClientState& c : p.setup.clients) {
    if (c.client_id == *options.client_id) me = &c;
  }
  if (me == nullptr) {
    spdlog::error("config error: --client-id {} not in [0, {})",
                  *options.client_id, p.setup.clients.size());
    return kExitConfigError;
  }
  auto endpoint = ParseEndpoint(options.server.value_or(p.config.address));
  if (!endpoint.ok()) {
    spdlog::error("config error: --server: {}", endpoint.status().message());
    return kExitConfigError;
  }
  const auto timeout = std::chrono::milliseconds(
      static_cast<int64_t>(p.config.timeout_seconds * 1000.0));
  JoinResult result =
      RunClient(*me, p.setup.spec, p.setup.schedule, p.setup.seed,
                p.setup.fixed_point_bits, p.hash, *endpoint, timeout);
  switch (result.outcome) {
    case JoinOutcome::kCompleted:
      spdlog::info("client {} served {} rounds", me->client_id,
                   result.rounds_served);
      return kExitOk;
    case JoinOutcome::kConfigMismatch:
      spdlog::error("config hash mismatch: {}", result.message);
      return kExitConfigMismatch;
    case JoinOutcome::kRejected:
    case JoinOutcome::kFailed:
      break;
  }
  spdlog::error("client {} stopped: {}", me->client_id, result.message);
  return kExitRuntimeAbort;
}

}  // namespace fedmesh
