// Copyright 2026 The Prunelab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// prunelab {gen,prune,eval,analyze,all} --config cfg.json [--out dir]
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 missing or foreign
// artifact, 4 numerical failure.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <functional>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "prunelab/prunelab.hpp"

namespace {

spdlog::level::level_enum log_level_from_env() {
  const char* env = std::getenv("PRUNELAB_LOG");
  if (!env) return spdlog::level::info;
  const auto level = spdlog::level::from_str(env);
  // from_str maps unknown names to "off"
  return (level == spdlog::level::off && std::string(env) != "off") ? spdlog::level::info : level;
}

void forward_log(prunelab::LogLevel level, const std::string& msg) {
  switch (level) {
    case prunelab::LogLevel::kError: spdlog::error(msg); break;
    case prunelab::LogLevel::kWarn: spdlog::warn(msg); break;
    case prunelab::LogLevel::kInfo: spdlog::info(msg); break;
    case prunelab::LogLevel::kDebug: spdlog::debug(msg); break;
  }
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("prunelab");
  spdlog::set_default_logger(logger);
  spdlog::set_level(log_level_from_env());
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Calibration-language pruning experiments on toy transformers"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  unsigned jobs = 1;
  std::uint64_t seed_offset = 0;

  using Stage = std::function<void(const prunelab::ExperimentConfig&, const prunelab::RunContext&)>;
  const std::map<std::string, std::pair<std::string, Stage>> stages = {
      {"gen", {"Generate calibration and validation corpora", prunelab::cmd_gen}},
      {"prune", {"Prune the base model once per calibration plan and seed", prunelab::cmd_prune}},
      {"eval", {"Perplexity, pruning error and SNR grid", prunelab::cmd_eval}},
      {"analyze", {"LSAR, mask IoU and LAPE analysis report", prunelab::cmd_analyze}},
      {"all", {"Run gen, prune, eval and analyze", prunelab::cmd_all}},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : stages) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("-o,--out", out_dir, "Output directory (overrides output_dir)");
    sub->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u));
    sub->add_option("--seed-offset", seed_offset, "Added to every seed in the config");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    prunelab::ExperimentConfig cfg = prunelab::load_config(config_path);
    prunelab::apply_seed_offset(cfg, seed_offset);
    if (seed_offset) prunelab::finalize_config(cfg);
    prunelab::RunContext ctx;
    ctx.out_dir = out_dir.empty() ? cfg.output_dir : out_dir;
    ctx.jobs = jobs;
    ctx.log = forward_log;
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      spdlog::info("{}: config {} -> {}", name, prunelab::config_hash(cfg), ctx.out_dir.string());
      stages.at(name).second(cfg, ctx);
    }
  } catch (const prunelab::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const prunelab::MissingArtifactError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const prunelab::NumericError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return 4;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
