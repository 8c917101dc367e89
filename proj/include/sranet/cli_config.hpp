#pragma once

#include <filesystem>

#include "json.hpp"
#include "sranet/synth.hpp"
#include "sranet/trainer.hpp"
#include "sranet/volprep.hpp"

// The single JSON document behind every CLI command:
//   {"train": {...}, "phantom": {...}, "mask": {...}}
// Each section is optional; unknown keys anywhere are rejected.
namespace sranet::cli {

struct CliConfig {
  trainer::TrainConfig train;
  synth::PhantomSpec phantom;
  volprep::MaskConfig mask;
};

nlohmann::json to_json(const synth::PhantomSpec& spec);
nlohmann::json to_json(const volprep::MaskConfig& mask);
nlohmann::json to_json(const CliConfig& cfg);

/// Throw std::invalid_argument on unknown keys or wrong value types.
synth::PhantomSpec phantom_from_json(const nlohmann::json& j);
volprep::MaskConfig mask_from_json(const nlohmann::json& j);
CliConfig config_from_json(const nlohmann::json& j);

/// Parses and validates; std::invalid_argument for bad content,
/// std::runtime_error when the file cannot be read.
CliConfig load_config(const std::filesystem::path& path);

}  // namespace sranet::cli
