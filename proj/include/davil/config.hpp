#pragma once

#include <filesystem>
#include <string>

#include "davil/bench.hpp"
#include "davil/chain_io.hpp"
#include "davil/ppo.hpp"

namespace davil {

/// One suite file: workcell, controller, learning and evaluation settings.
/// Relative file names inside it resolve against the file's directory.
struct SuiteConfig {
  Scene scene;
  ExperimentConfig experiment;
  TrainConfig train;
  std::string text;  // canonical dump of the parsed document, hashed into manifests
  std::filesystem::path source;
};

SuiteConfig suite_from_json(const Json& doc, const std::filesystem::path& base_dir);
SuiteConfig load_suite(const std::filesystem::path& path);

/// Train settings for a learned method: ours_no_ema switches the EMA term off, rl_ic trains under classical control.
TrainConfig train_config_for(const SuiteConfig& suite, Method method);

}  // namespace davil
