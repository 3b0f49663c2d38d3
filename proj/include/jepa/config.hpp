#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "jepa/model.hpp"
#include "jepa/packer.hpp"
#include "jepa/pipeline.hpp"
#include "jepa/trainer.hpp"

namespace jepa {

/// Everything a run needs. Mirrors the JSON config file section by section.
struct RunConfig {
  PipelineConfig pipeline;
  PackerConfig packer;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path dataset;
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 100;

  /// Field-level ConfigError on any inconsistency. Paths are checked only
  /// when check_paths is set.
  void validate(bool check_paths) const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Unknown keys and wrongly typed values raise ConfigError naming the field.
/// Relative dataset paths resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace jepa
