#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sequifi/corpus.hpp"
#include "sequifi/trainer.hpp"

namespace sequifi {

enum class StrategyTag { vanilla, sequifi, ewc, weight_avg, replay };

inline constexpr std::array<StrategyTag, 5> kAllStrategies{StrategyTag::vanilla, StrategyTag::sequifi,
                                                          StrategyTag::ewc, StrategyTag::weight_avg,
                                                          StrategyTag::replay};

std::string_view strategy_name(StrategyTag tag);
std::optional<StrategyTag> parse_strategy(std::string_view name);
/// Label used in result tables ("FT", "SeQuiFi", "EWC", "WA", "Replay").
std::string_view strategy_display_name(StrategyTag tag);

struct StrategyConfig {
  StrategyTag tag = StrategyTag::sequifi;
  int epochs_total = 60;
  int sequifi_epochs_per_class = 15;
  ClassOrder class_order{EmotionLabel::happy, EmotionLabel::angry, EmotionLabel::sad, EmotionLabel::neutral};
  double ewc_lambda = 100.0;
  /// Number of Fisher draws; 0 means the full previous-stage train split.
  int fisher_samples = 0;
  double wa_alpha = 0.5;
  double replay_fraction = 0.10;
  std::uint64_t seed = 0;
};

/// Enforces sequifi_epochs_per_class * 4 == epochs_total and the ranges of
/// every hyperparameter.
void validate_strategy(const StrategyConfig& cfg);

/// Diagonal empirical Fisher and the parameters it was measured at.
struct FisherInfo {
  Params fisher;
  Params anchor;
};

struct ReplayBuffer {
  std::vector<Sample> samples;
  /// dataset name -> per-class counts drawn from it.
  std::map<std::string, std::array<int, kNumClasses>> counts;
};

struct StageOutcome {
  Params params;
  TrainLog log;
  AdamState adam;
};

/// Full train split for epochs_total epochs from a fresh Adam state.
StageOutcome vanilla_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                              const TrainConfig& tc, const TrainHooks& hooks = {});

/// One class at a time in cfg.class_order, sequifi_epochs_per_class epochs
/// each, fresh Adam state per phase. Phase 0 trains with tc.seed; later
/// phases use seeds derived from it. Empty class subsets are skipped.
StageOutcome sequifi_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                              const TrainConfig& tc, const TrainHooks& hooks = {});

/// Indices of n draws from a population: seeded permutations concatenated,
/// so n <= population draws without replacement.
std::vector<std::size_t> fisher_draws(std::size_t population, int n, std::uint64_t seed);

/// Mean of the elementwise squares of grad(i) over the drawn indices.
template <typename GradFn>
Eigen::VectorXd mean_squared_gradient(std::span<const std::size_t> draws, GradFn&& grad) {
  Eigen::VectorXd acc;
  for (std::size_t i : draws) {
    const Eigen::VectorXd g = grad(i);
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(g.size());
    acc += g.cwiseProduct(g);
  }
  if (!draws.empty()) acc /= static_cast<double>(draws.size());
  return acc;
}

Eigen::VectorXd flatten(const Params& params, TensorSet set = TensorSet::trainable);
void unflatten(const Eigen::VectorXd& flat, Params& params, TensorSet set = TensorSet::trainable);

/// Gradient of ln p(label | x) for one sample, eval-mode network.
Params log_likelihood_gradient(const Params& params, const Sample& sample);

/// F = mean over n seeded draws of g * g, g = grad ln p(y_i | x_i) with the
/// true label. n == 0 uses every sample once.
FisherInfo estimate_fisher(const Params& params, std::span<const Sample> samples, int n, std::uint64_t seed);

/// (lambda / 2) * sum_k sum_i F_k,i (theta_i - anchor_k,i)^2
double ewc_penalty(const Params& params, std::span<const FisherInfo> fishers, double lambda);
/// Adds lambda * F_k * (theta - anchor_k) to grads for every k.
void add_ewc_gradient(const Params& params, std::span<const FisherInfo> fishers, double lambda, Params& grads);

StageOutcome ewc_finetune(const Params& prev, std::span<const FisherInfo> fishers, const DatasetManifest& dataset,
                          const StrategyConfig& cfg, const TrainConfig& tc, const TrainHooks& hooks = {});

/// alpha * old + (1 - alpha) * new for every tensor, running BN stats included.
Params weight_average(const Params& old_params, const Params& new_params, double alpha);

/// Vanilla fine-tuning followed by averaging with `prev` at cfg.wa_alpha.
StageOutcome weight_avg_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                                 const TrainConfig& tc, const TrainHooks& hooks = {});

/// round(fraction * n) train samples per (dataset, class), drawn without
/// replacement. A dataset's draw depends only on (seed, dataset name, class),
/// so the cumulative buffer grows consistently along a chain.
ReplayBuffer build_replay_buffer(std::span<const DatasetManifest> previous, double fraction, std::uint64_t seed);

/// Trains on the new train split followed by the buffer, shuffled jointly.
StageOutcome replay_finetune(const Params& prev, const ReplayBuffer& buffer, const DatasetManifest& dataset,
                             const StrategyConfig& cfg, const TrainConfig& tc, const TrainHooks& hooks = {});

void save_fisher(const std::filesystem::path& path, const FisherInfo& info);
void save_replay_buffer(const std::filesystem::path& path, const ReplayBuffer& buffer);

}  // namespace sequifi
