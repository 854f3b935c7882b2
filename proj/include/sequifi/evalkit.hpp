#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sequifi/continual.hpp"
#include "sequifi/corpus.hpp"
#include "sequifi/trainer.hpp"

namespace sequifi {

/// rows = true class, cols = predicted class.
using Confusion = Eigen::Matrix<std::int64_t, kNumClasses, kNumClasses>;

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumClasses> class_f1{};
  Confusion confusion = Confusion::Zero();
};

/// Accuracy = trace / total; macro-F1 averages all four classes, with F1 = 0
/// for a class whose precision + recall is 0.
Metrics metrics_from_confusion(const Confusion& confusion);
Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

struct FoldPlan {
  std::vector<ClassOrder> folds;
  std::uint64_t seed = 0;
};

inline constexpr int kDefaultFolds = 5;

/// `count` distinct permutations of 0..num_labels-1 drawn uniformly without
/// replacement. Throws ConfigError when count exceeds num_labels!.
std::vector<std::vector<int>> sample_permutations(int num_labels, int count, std::uint64_t seed);

FoldPlan make_fold_plan(std::uint64_t seed, int folds = kDefaultFolds);

/// cells[stage][dataset]; stage i has trained on datasets 0..i.
struct EvalMatrix {
  std::vector<std::string> datasets;
  std::vector<std::string> stage_labels;
  std::vector<std::vector<Metrics>> cells;
  std::vector<std::vector<bool>> seen;

  std::size_t num_stages() const { return cells.size(); }
};

/// Short SD label per stage, e.g. "C", "C+R", ... built from the first letter
/// of each dataset name when those letters are unique, else the full names.
std::vector<std::string> stage_labels(std::span<const std::string> datasets);

EvalMatrix empty_eval_matrix(std::span<const std::string> datasets);

/// Cellwise mean of accuracy, macro-F1 and per-class F1; confusions summed.
EvalMatrix aggregate_folds(std::span<const EvalMatrix> per_fold);

/// Per-stage record handed to ChainOptions::on_stage.
struct StageRecord {
  int fold = 0;
  int stage = 0;
  const Params* params = nullptr;
  const StageOutcome* outcome = nullptr;
  const FisherInfo* fisher = nullptr;        // EWC: consolidated after this stage
  const ReplayBuffer* replay = nullptr;      // replay: buffer used in this stage
};

struct ChainOptions {
  Architecture architecture;  // input_dim is taken from the manifests
  int jobs = 1;
  bool record_batches = false;
  /// Called from the worker that ran the fold; must be safe to call concurrently
  /// for distinct folds.
  std::function<void(const StageRecord&)> on_stage;
};

struct FoldResult {
  EvalMatrix matrix;
  std::vector<TrainLog> stage_logs;  // one per stage, IM first
};

struct ChainResult {
  std::vector<FoldResult> folds;
  EvalMatrix mean;
};

/// Per fold: the IM stage trains from scratch on manifest 0 for
/// epochs_total epochs; each later manifest is absorbed with the configured
/// strategy; after every stage every manifest's test split is evaluated.
/// All randomness comes from (train_cfg.seed, fold, stage, purpose).
ChainResult run_chain(std::span<const DatasetManifest> manifests, const StrategyConfig& strategy,
                      const TrainConfig& train_cfg, const FoldPlan& plan, const ChainOptions& options = {});

/// One row per stage x dataset x fold: stage,dataset,seen,fold,accuracy,macro_f1.
std::string fold_results_csv(std::span<const FoldResult> folds);
/// Same columns for the across-fold mean, fold = "mean".
std::string mean_results_csv(const EvalMatrix& mean);

}  // namespace sequifi
