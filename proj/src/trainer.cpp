#include "sequifi/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>

namespace sequifi {

void validate_architecture(const Architecture& arch) {
  if (arch.input_dim <= 0) throw ShapeError("architecture: input_dim must be positive");
  if (arch.lstm_units.empty()) throw ShapeError("architecture: at least one LSTM layer is required");
  for (int u : arch.lstm_units) {
    if (u <= 0) throw ShapeError("architecture: LSTM units must be positive");
  }
  for (int u : arch.dense_units) {
    if (u <= 0) throw ShapeError("architecture: dense units must be positive");
  }
  if (arch.num_classes < 2) throw ShapeError("architecture: need at least two classes");
}

NetworkParams<double> init_params(const Architecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  Rng rng(derive_seed(seed, "init"));
  const auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat<double> w(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) w(i, j) = rng.uniform(-limit, limit);
    }
    return w;
  };

  Params p;
  int in = arch.input_dim;
  for (int units : arch.lstm_units) {
    LstmParams<double> l;
    l.input_weights = glorot(4 * units, in);
    l.recurrent_weights = glorot(4 * units, units);
    l.bias = Vec<double>::Zero(4 * units);
    l.bias.segment(units, units).setOnes();
    p.lstm.push_back(std::move(l));
    in = units;
  }
  for (int units : arch.dense_units) {
    p.dense.push_back({glorot(units, in), Vec<double>::Zero(units)});
    p.bn.push_back({Vec<double>::Ones(units), Vec<double>::Zero(units), Vec<double>::Zero(units),
                    Vec<double>::Ones(units)});
    in = units;
  }
  p.head = {glorot(arch.num_classes, in), Vec<double>::Zero(arch.num_classes)};
  return p;
}

AdamState fresh_adam_state(const Params& like) {
  return {zeros_like(like), zeros_like(like), 0};
}

void adam_step(Params& params, const Params& grads, AdamState& state, double learning_rate,
               const AdamConfig& cfg) {
  if (!same_shape(params, grads) || !same_shape(params, state.m) || !same_shape(params, state.v)) {
    throw ShapeError("adam_step: parameter, gradient and state shapes differ");
  }
  zip_tensors(TensorSet::trainable,
              [](const TensorInfo& info, const auto& g) {
                if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient in " + info.name);
              },
              grads);
  const std::int64_t t = ++state.t;
  zip_tensors(TensorSet::trainable,
              [&](const TensorInfo&, auto& p, const auto& g, auto& m, auto& v) {
                adam_update(p, g, m, v, t, learning_rate, cfg);
              },
              params, grads, state.m, state.v);
}

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
  if (cfg.batch_size <= 0) throw ConfigError("training: batch_size must be positive");
  if (cfg.epochs < 0) throw ConfigError("training: epochs must be >= 0");
  if (!(cfg.l2_lambda >= 0.0)) throw ConfigError("training: l2_lambda must be nonnegative");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw ConfigError("training: dropout_rate must be in [0, 1)");
  }
  if (!(cfg.bn_momentum >= 0.0 && cfg.bn_momentum <= 1.0)) {
    throw ConfigError("training: bn_momentum must be in [0, 1]");
  }
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0 && cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0 &&
        cfg.adam.epsilon > 0.0)) {
    throw ConfigError("training: invalid Adam hyperparameters");
  }
}

void TrainLog::append(const TrainLog& other) {
  epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
  batches.insert(batches.end(), other.batches.begin(), other.batches.end());
}

std::vector<int> label_codes(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(to_code(s.label));
  return out;
}

TrainResult train(const Params& init, std::span<const Sample> samples, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  validate_train_config(cfg);
  if (samples.empty()) throw DataError("train: empty sample set");
  const int classes = static_cast<int>(init.head.weights.rows());
  for (const auto& s : samples) {
    if (to_code(s.label) < 0 || to_code(s.label) >= classes) {
      throw DataError("train: label of '" + s.id + "' outside the class range");
    }
  }

  TrainResult result{init, fresh_adam_state(init), {}};
  const Architecture arch = init.architecture();
  const Regularization reg = cfg.regularization();
  std::vector<std::size_t> order(samples.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Mat<double>*> seqs;
      std::vector<int> labels;
      BatchRecord record{hooks.phase, epoch, {}, {}};
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = samples[order[k]];
        seqs.push_back(&s.frames());
        labels.push_back(to_code(s.label));
        if (hooks.record_batches) {
          record.ids.push_back(s.id);
          record.labels.push_back(to_code(s.label));
        }
      }
      const auto batch = pack_batch<double, Mat<double>>(seqs);
      DropoutMasks<double> masks;
      if (cfg.dropout_rate > 0.0) {
        masks = make_dropout_masks<double>(arch, batch.size(), cfg.dropout_rate, dropout_rng);
      }
      const auto cache = forward(result.params, batch, Mode::train, cfg.dropout_rate > 0.0 ? &masks : nullptr);
      double batch_loss = loss(cache.probs, labels, result.params, reg);
      Params grads = backward(result.params, cache, labels, &reg);
      if (hooks.penalty) batch_loss += hooks.penalty(result.params, grads);
      adam_step(result.params, grads, result.adam, cfg.learning_rate, cfg.adam);
      update_running_stats(result.params, cache, cfg.bn_momentum);
      loss_sum += batch_loss * static_cast<double>(labels.size());
      if (hooks.record_batches) result.log.batches.push_back(std::move(record));
    }
    const double mean_loss = loss_sum / static_cast<double>(samples.size());
    result.log.epochs.push_back({hooks.phase, epoch, mean_loss, samples.size()});
    SPDLOG_DEBUG("{} epoch {} loss {:.6f}", hooks.phase, epoch, mean_loss);
  }
  return result;
}

Mat<double> predict_proba(const Params& params, std::span<const Sample> samples) {
  constexpr std::size_t kChunk = 256;
  Mat<double> out(static_cast<Eigen::Index>(samples.size()), params.head.weights.rows());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t stop = std::min(samples.size(), start + kChunk);
    std::vector<const Mat<double>*> seqs;
    for (std::size_t k = start; k < stop; ++k) seqs.push_back(&samples[k].frames());
    const auto cache = forward(params, pack_batch<double, Mat<double>>(seqs), Mode::eval);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
        cache.probabilities();
  }
  return out;
}

std::vector<int> argmax_rows(const Mat<double>& probabilities) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < probabilities.cols(); ++c) {
      if (probabilities(r, c) > probabilities(r, best)) best = static_cast<int>(c);
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> predict(const Params& params, std::span<const Sample> samples) {
  return argmax_rows(predict_proba(params, samples));
}

}  // namespace sequifi
