#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "patternid/embednet.hpp"
#include "patternid/evaluation.hpp"
#include "patternid/mining.hpp"
#include "patternid/synthcorpus.hpp"
#include "patternid/trainer.hpp"

namespace patternid {

/// Everything one CLI invocation needs, loaded from a single JSON document
/// with sections `corpus`, `model`, `mining`, `train`, `eval`, `paths`.
/// Unknown keys anywhere are rejected with their JSON path.
struct RunConfig {
  DatasetConfig corpus;
  TrainConfig train;  // owns the model, mining and eval sections
  std::filesystem::path checkpoint = "model.pidm";
  std::filesystem::path train_log = "train_log.ndjson";
  std::filesystem::path database = "gallery.pidb";
  std::filesystem::path report;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc, const std::string& path = "model");

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace patternid
