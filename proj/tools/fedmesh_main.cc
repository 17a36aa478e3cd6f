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

// fedmesh: federated training across simulated data domains.

#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "fedmesh/runner.h"
#include "spdlog/cfg/helpers.h"
#include "spdlog/sinks/stdout_color_sinks.h"
#include "spdlog/spdlog.h"

namespace {

void ConfigureLogging() {
  auto logger = spdlog::stderr_color_mt("fedmesh");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  if (const char* level = std::getenv("FEDMESH_LOG")) {
    spdlog::cfg::helpers::load_levels(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  ConfigureLogging();
  CLI::App app{"Federated training across simulated data domains"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedmesh::kArtifactVersion);

  fedmesh::CommandOptions options;
  uint64_t seed = 0;
  uint32_t client_id = 0;
  std::string out, listen, server;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", options.config_path, "Experiment config file")
        ->required();
    cmd->add_option("--seed", seed, "Override the experiment seed");
    cmd->add_option("--override", options.overrides,
                    "KEY=VALUE assignment applied to the config (repeatable)");
  };
  auto outputs = [&](CLI::App* cmd) {
    cmd->add_option("--out", out, "Output directory");
    cmd->add_flag("--force", options.force,
                  "Write into a non-empty output directory");
  };

  CLI::App* validate = app.add_subcommand("validate", "Check a config");
  common(validate);
  CLI::App* simulate =
      app.add_subcommand("simulate", "Run every client in this process");
  common(simulate);
  outputs(simulate);
  CLI::App* baseline = app.add_subcommand(
      "baseline", "Train the same model on the pooled client data");
  common(baseline);
  outputs(baseline);
  CLI::App* serve = app.add_subcommand("serve", "Coordinate remote clients");
  common(serve);
  outputs(serve);
  serve->add_option("--listen", listen, "ADDR:PORT to listen on");
  CLI::App* join = app.add_subcommand("join", "Serve as one client");
  common(join);
  join->add_option("--server", server, "ADDR:PORT of the server");
  join->add_option("--client-id", client_id, "This client's id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedmesh::kExitConfigError;
  }

  for (CLI::App* cmd : app.get_subcommands()) {
    if (cmd->count("--seed") > 0) options.seed = seed;
    if (cmd->get_option_no_throw("--out") != nullptr &&
        cmd->count("--out") > 0) {
      options.out_dir = out;
    }
    if (cmd->get_option_no_throw("--listen") != nullptr &&
        cmd->count("--listen") > 0) {
      options.listen = listen;
    }
    if (cmd->get_option_no_throw("--server") != nullptr &&
        cmd->count("--server") > 0) {
      options.server = server;
    }
    if (cmd->get_option_no_throw("--client-id") != nullptr) {
      options.client_id = client_id;
    }
  }

  if (validate->parsed()) return fedmesh::CmdValidate(options);
  if (simulate->parsed()) return fedmesh::CmdSimulate(options);
  if (baseline->parsed()) return fedmesh::CmdBaseline(options);
  if (serve->parsed()) return fedmesh::CmdServe(options);
  return fedmesh::CmdJoin(options);
}
