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

// Subcommand implementations behind the fedmesh binary. Each returns a
// process exit code.

#ifndef FEDMESH_RUNNER_H_
#define FEDMESH_RUNNER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "fedmesh/config.h"

namespace fedmesh {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeAbort = 2;
inline constexpr int kExitConfigMismatch = 3;

inline constexpr char kArtifactVersion[] = "0.1.0";

struct CommandOptions {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;
  bool force = false;
  std::optional<std::string> listen;
  std::optional<std::string> server;
  std::optional<uint32_t> client_id;
};

// Reads the config file, applies --override assignments in order, then
// --seed and --out, and validates the result.
absl::StatusOr<ExperimentConfig> LoadExperiment(const CommandOptions& options);

int CmdValidate(const CommandOptions& options);
int CmdSimulate(const CommandOptions& options);
int CmdBaseline(const CommandOptions& options);
int CmdServe(const CommandOptions& options);
int CmdJoin(const CommandOptions& options);

}  // namespace fedmesh

#endif  // FEDMESH_RUNNER_H_
