#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sequifi/evalkit.hpp"

namespace sequifi {

/// Across-fold means of one run, as persisted in its run directory.
struct RunSummary {
  std::string strategy;     // strategy tag, e.g. "sequifi"
  std::string feature_tag;  // e.g. "x-vector", "MFCC"
  std::string config_hash;
  int folds = 0;
  std::vector<std::string> datasets;
  /// Stages present in the results, in chain order.
  std::vector<std::string> stage_labels;
  /// accuracy[stage][dataset], macro_f1[stage][dataset]
  std::vector<std::vector<double>> accuracy;
  std::vector<std::vector<double>> macro_f1;
  std::vector<std::vector<bool>> seen;
};

RunSummary summary_from_matrix(const EvalMatrix& mean, std::string strategy, std::string feature_tag,
                               std::string config_hash, int folds);

/// Reads run.json and results_mean.csv from a run directory.
RunSummary load_run_summary(const std::filesystem::path& run_dir);

struct ComparisonCell {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  bool seen = false;
  bool best_accuracy = false;
  bool best_f1 = false;
};

struct ComparisonRow {
  std::string stage;
  std::string model;  // e.g. "SeQuiFi (x-vector)", "IM (MFCC)"
  std::string feature_tag;
  std::string config_hash;
  std::vector<ComparisonCell> cells;
};

struct ComparisonTable {
  std::vector<std::string> datasets;
  std::vector<std::string> stages;
  std::vector<ComparisonRow> rows;
};

/// Groups runs by stage. The first stage holds one "IM (<feature>)" row per
/// feature tag; later stages hold one row per (strategy, feature tag). Within
/// a stage and feature tag, the highest seen accuracy and macro-F1 of each
/// dataset column are marked best (ties all marked). Throws ConfigError when
/// the runs disagree on the chain or fold count.
ComparisonTable build_comparison(std::span<const RunSummary> runs);

/// Percent values with two decimals; **bold** marks best-in-stage, a dagger
/// marks unseen (zero-shot) cells.
std::string render_markdown(const ComparisonTable& table);
/// Wide CSV: stage,model,config_hash then <dataset>_A,<dataset>_F1,<dataset>_mark per dataset.
std::string render_csv(const ComparisonTable& table);

}  // namespace sequifi
