#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sequifi/continual.hpp"
#include "sequifi/corpus.hpp"
#include "sequifi/features.hpp"
#include "sequifi/trainer.hpp"

namespace sequifi {

struct FeatureConfig {
  enum class Kind { precomputed, mfcc };
  Kind kind = Kind::precomputed;
  /// Label used for result rows; defaults to "MFCC" for extracted features.
  std::string tag = "precomputed";
  MfccConfig mfcc;
};

struct ExperimentConfig {
  /// Manifest paths as written in the file; relative ones resolve against base_dir.
  std::vector<std::filesystem::path> chain;
  FeatureConfig feature;
  StrategyConfig strategy;
  TrainConfig training;
  Architecture architecture;  // input_dim is filled from the manifests
  int folds = 5;
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
};

/// Strict parse: unknown keys and invalid values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Hex FNV-1a of the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

MfccConfig mfcc_from_json(const nlohmann::json& j);
nlohmann::ordered_json mfcc_to_json(const MfccConfig& cfg);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace sequifi
