#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sequifi/labels.hpp"

namespace sequifi {

enum class SplitSide { train, test };

struct WavRef {
  std::filesystem::path path;
};

/// Feature frames are stored column-wise: rows = feature_dim, cols = time steps.
/// Pooled utterance vectors are a single column.
using FeatureSource = std::variant<Eigen::MatrixXd, WavRef>;

struct Sample {
  std::string id;
  FeatureSource source;
  EmotionLabel label = EmotionLabel::happy;
  std::string dataset_id;

  bool has_features() const { return std::holds_alternative<Eigen::MatrixXd>(source); }
  /// Throws DataError when the sample only references a WAV file.
  const Eigen::MatrixXd& frames() const;
};

using SplitMap = std::map<std::string, SplitSide>;

struct DatasetManifest {
  std::string name;
  std::string language;
  int feature_dim = 0;
  std::vector<Sample> samples;
  SplitMap split;
  /// Directory relative paths in the manifest file were resolved against.
  std::filesystem::path base_dir;
  std::optional<std::filesystem::path> features_csv;

  bool materialized() const;
};

/// Parameters of the synthetic distribution-shift corpus.
struct SynthSpec {
  int num_datasets = 2;
  int feature_dim = 8;
  int samples_per_class = 100;
  double class_separation = 6.0;
  double domain_shift = 6.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Checks the manifest invariants; throws DataError naming the offending sample.
void validate_manifest(const DatasetManifest& manifest);

SplitMap stratified_split(std::span<const Sample> samples, double test_fraction,
                          std::uint64_t seed);

/// Samples with the given label on the given split side, in manifest order.
std::vector<Sample> class_subset(const DatasetManifest& manifest, EmotionLabel label,
                                 SplitSide side);
std::vector<Sample> split_side(const DatasetManifest& manifest, SplitSide side);

void validate_synth_spec(const SynthSpec& spec);
/// Mean of class `label` in dataset `dataset_index`.
Eigen::VectorXd synth_class_mean(const SynthSpec& spec, int dataset_index, EmotionLabel label);
std::vector<DatasetManifest> gen_synth(const SynthSpec& spec);

inline constexpr double kDefaultTestFraction = 0.2;

}  // namespace sequifi
