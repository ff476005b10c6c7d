#pragma once

// INI-style run configuration with sections [scenario], [training],
// [network] and [experiment]. Unknown sections or keys are errors.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "isacbeam/experiments.hpp"

namespace isacbeam::cli {

struct RunConfig {
  ExperimentSpec spec;
  std::vector<std::size_t> epoch_list{1, 5, 10, 20};
  std::size_t fine_tune_epochs = 1;
  std::string source_checkpoint;
};

// `overrides` are "section.key=value" strings applied after the file.
// Throws ConfigError.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides);

// Every accepted "section.key".
std::vector<std::string> known_keys();

}  // namespace isacbeam::cli
