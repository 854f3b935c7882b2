#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sequifi/corpus.hpp"
#include "sequifi/network.hpp"

namespace sequifi {

using Params = NetworkParams<double>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Params m;
  Params v;
  std::int64_t t = 0;
};

AdamState fresh_adam_state(const Params& like);

/// One bias-corrected Adam update on a single tensor; `t` is the step count
/// after increment (t >= 1).
template <typename P, typename G, typename M, typename V>
void adam_update(P& param, const G& grad, M& m, V& v, std::int64_t t, double learning_rate,
                 const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
}

/// Updates every trainable tensor; throws NumericError naming the first
/// tensor with a non-finite gradient (nothing is modified in that case).
void adam_step(Params& params, const Params& grads, AdamState& state, double learning_rate,
               const AdamConfig& cfg = {});

struct TrainConfig {
  double learning_rate = 1e-3;
  AdamConfig adam;
  int batch_size = 32;
  int epochs = 60;
  double l2_lambda = 1e-4;
  bool l2_on_recurrent = true;
  double dropout_rate = 0.2;
  double bn_momentum = 0.9;
  std::uint64_t seed = 0;

  Regularization regularization() const { return {l2_lambda, l2_on_recurrent}; }
};

void validate_train_config(const TrainConfig& cfg);

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
};

struct BatchRecord {
  std::string phase;
  int epoch = 0;
  std::vector<std::string> ids;
  std::vector<int> labels;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<BatchRecord> batches;  // only filled when TrainHooks::record_batches

  void append(const TrainLog& other);
  /// Number of completed epochs; every strategy's budget is counted in these.
  std::size_t epoch_units() const { return epochs.size(); }
};

/// Extra objective term: adds its gradient into `grads` and returns its value.
using PenaltyFn = std::function<double(const Params& params, Params& grads)>;

struct TrainHooks {
  PenaltyFn penalty;
  bool record_batches = false;
  std::string phase = "train";
};

struct TrainResult {
  Params params;
  AdamState adam;
  TrainLog log;
};

/// Seeded mini-batch training from `init` with a fresh Adam state. Each epoch
/// shuffles with (seed, epoch), runs forward/backward/adam_step per batch of
/// batch_size (last batch may be smaller) and updates BN running statistics.
TrainResult train(const Params& init, std::span<const Sample> samples, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Eval-mode class probabilities, samples x classes.
Mat<double> predict_proba(const Params& params, std::span<const Sample> samples);

/// Argmax of each probability row; ties go to the lowest class code.
std::vector<int> argmax_rows(const Mat<double>& probabilities);

std::vector<int> predict(const Params& params, std::span<const Sample> samples);

std::vector<int> label_codes(std::span<const Sample> samples);

}  // namespace sequifi
