#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sequifi/config.hpp"
#include "sequifi/evalkit.hpp"

namespace sequifi {

/// Writes synth_<i>.json and synth_<i>_features.csv per generated dataset.
/// Returns the manifest paths.
std::vector<std::filesystem::path> cmd_gen_synth(const std::filesystem::path& spec_file,
                                                 const std::filesystem::path& out_dir,
                                                 std::optional<std::uint64_t> seed = std::nullopt);

/// MFCC frames (d x T) for one WAV file: read, resample to 16 kHz, extract,
/// and average-pool to a single column unless cfg.sequence_mode.
Eigen::MatrixXd extract_wav_features(const std::filesystem::path& wav, const MfccConfig& cfg);

/// Replaces every WAV reference in `manifest` with extracted MFCC features.
/// Throws DataError naming the first sample that fails; `manifest` is left
/// untouched in that case.
void materialize_mfcc(DatasetManifest& manifest, const MfccConfig& cfg);

/// Extracts MFCC features for a WAV-referencing manifest, writes
/// <stem>_mfcc.csv next to it and points the manifest at it. Nothing is
/// written unless every sample succeeds. Returns the CSV path.
std::filesystem::path cmd_extract(const std::filesystem::path& manifest_path, const MfccConfig& cfg);

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  int jobs = 1;
};

struct RunOutcome {
  std::filesystem::path output_dir;
  ChainResult result;
  std::string config_hash;
};

/// Executes the configured chain over all folds and persists config.json,
/// run.json, results_folds.csv, results_mean.csv, results.md, budget.csv and
/// per-fold checkpoints/logs. On failure writes error.json, marks run.json
/// incomplete and rethrows.
RunOutcome cmd_run(const std::filesystem::path& config_file, const RunOverrides& overrides = {});

/// Writes comparison.md and comparison.csv into out_dir. Returns the markdown.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

/// Writes `text` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace sequifi
