#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tabrec/model.hpp"
#include "json.hpp"

namespace tabrec {

struct DataConfig {
  std::string train;             // dataset directory or annotations JSONL
  std::string validation;        // optional held-out set
  std::string profile = "desk";  // generator profile for gen-data: desk | paper-geometry
};

struct TrainingConfig {
  int epochs = 40;
  int batch_size = 4;
  std::uint64_t seed = 0;
  int checkpoint_every = 1;      // epochs between periodic checkpoints
  int validate_every = 1;        // epochs between validation passes (0 disables)
  int validation_limit = 0;      // evaluate at most this many validation samples (0 = all)
  bool shuffle = true;
};

struct EvalConfig {
  std::vector<std::string> metrics{"teds", "teds-struct", "map"};
  double iou_threshold = 0.5;
};

/// One JSON document driving every subcommand. Sections: model, data,
/// training, eval. Missing keys take the defaults above; unknown keys are
/// rejected.
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  DataConfig data;
  TrainingConfig training;
  EvalConfig eval;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
/// Fields absent from `j` keep the values of `base`. Throws ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = ModelConfig::desk());

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Reads and validates a config file. Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace tabrec
