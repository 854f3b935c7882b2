#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sequifi/errors.hpp"
#include "sequifi/rng.hpp"

namespace sequifi {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Layer widths of the classifier: LSTM stack, then dense blocks, then the softmax head.
struct Architecture {
  int input_dim = 0;
  std::vector<int> lstm_units{64, 64};
  std::vector<int> dense_units{25, 20, 15, 10};
  int num_classes = 4;

  bool operator==(const Architecture&) const = default;
};

void validate_architecture(const Architecture& arch);

/// Gate rows are stacked [input; forget; cell candidate; output].
template <typename Scalar>
struct LstmParams {
  Mat<Scalar> input_weights;      // 4H x in
  Mat<Scalar> recurrent_weights;  // 4H x H
  Vec<Scalar> bias;               // 4H

  Eigen::Index units() const { return recurrent_weights.cols(); }
};

template <typename Scalar>
struct DenseParams {
  Mat<Scalar> weights;  // out x in
  Vec<Scalar> bias;
};

template <typename Scalar>
struct BatchNormParams {
  Vec<Scalar> scale;
  Vec<Scalar> shift;
  Vec<Scalar> running_mean;
  Vec<Scalar> running_var;
};

/// All tensors of the classifier. The same type doubles as the gradient
/// record (running statistics stay zero there) and as Adam moment storage.
template <typename Scalar>
struct NetworkParams {
  std::vector<LstmParams<Scalar>> lstm;
  std::vector<DenseParams<Scalar>> dense;
  std::vector<BatchNormParams<Scalar>> bn;
  DenseParams<Scalar> head;

  Architecture architecture() const {
    Architecture a;
    a.input_dim = lstm.empty() ? 0 : static_cast<int>(lstm.front().input_weights.cols());
    a.lstm_units.clear();
    for (const auto& l : lstm) a.lstm_units.push_back(static_cast<int>(l.units()));
    a.dense_units.clear();
    for (const auto& d : dense) a.dense_units.push_back(static_cast<int>(d.weights.rows()));
    a.num_classes = static_cast<int>(head.weights.rows());
    return a;
  }
};

enum class TensorKind { input_weight, recurrent_weight, bias, bn_scale, bn_shift, bn_running_mean, bn_running_var };

struct TensorInfo {
  std::string name;
  TensorKind kind;

  bool is_weight_matrix() const {
    return kind == TensorKind::input_weight || kind == TensorKind::recurrent_weight;
  }
  bool is_running_stat() const {
    return kind == TensorKind::bn_running_mean || kind == TensorKind::bn_running_var;
  }
};

enum class TensorSet { trainable, all };

/// Calls fn(info, t0, t1, ...) for corresponding tensors of every params
/// argument, in a fixed order. Running BN statistics are visited only for
/// TensorSet::all. Shapes are not checked here; see same_shape().
template <typename Fn, typename First, typename... Rest>
void zip_tensors(TensorSet set, Fn&& fn, First& first, Rest&... rest) {
  for (std::size_t i = 0; i < first.lstm.size(); ++i) {
    const std::string p = "lstm" + std::to_string(i) + ".";
    fn(TensorInfo{p + "input_weights", TensorKind::input_weight}, first.lstm[i].input_weights,
       rest.lstm[i].input_weights...);
    fn(TensorInfo{p + "recurrent_weights", TensorKind::recurrent_weight}, first.lstm[i].recurrent_weights,
       rest.lstm[i].recurrent_weights...);
    fn(TensorInfo{p + "bias", TensorKind::bias}, first.lstm[i].bias, rest.lstm[i].bias...);
  }
  for (std::size_t i = 0; i < first.dense.size(); ++i) {
    const std::string p = "dense" + std::to_string(i) + ".";
    fn(TensorInfo{p + "weights", TensorKind::input_weight}, first.dense[i].weights, rest.dense[i].weights...);
    fn(TensorInfo{p + "bias", TensorKind::bias}, first.dense[i].bias, rest.dense[i].bias...);
    const std::string q = "bn" + std::to_string(i) + ".";
    fn(TensorInfo{q + "scale", TensorKind::bn_scale}, first.bn[i].scale, rest.bn[i].scale...);
    fn(TensorInfo{q + "shift", TensorKind::bn_shift}, first.bn[i].shift, rest.bn[i].shift...);
    if (set == TensorSet::all) {
      fn(TensorInfo{q + "running_mean", TensorKind::bn_running_mean}, first.bn[i].running_mean,
         rest.bn[i].running_mean...);
      fn(TensorInfo{q + "running_var", TensorKind::bn_running_var}, first.bn[i].running_var,
         rest.bn[i].running_var...);
    }
  }
  fn(TensorInfo{"head.weights", TensorKind::input_weight}, first.head.weights, rest.head.weights...);
  fn(TensorInfo{"head.bias", TensorKind::bias}, first.head.bias, rest.head.bias...);
}

template <typename A, typename B>
bool same_shape(const A& a, const B& b) {
  if (a.lstm.size() != b.lstm.size() || a.dense.size() != b.dense.size() || a.bn.size() != b.bn.size()) {
    return false;
  }
  bool ok = true;
  zip_tensors(TensorSet::all,
              [&](const TensorInfo&, const auto& x, const auto& y) {
                ok = ok && x.rows() == y.rows() && x.cols() == y.cols();
              },
              a, b);
  return ok;
}

/// Same shapes as `like`, every element zero.
template <typename Scalar>
NetworkParams<Scalar> zeros_like(const NetworkParams<Scalar>& like) {
  NetworkParams<Scalar> out = like;
  zip_tensors(TensorSet::all, [](const TensorInfo&, auto& t) { t.setZero(); }, out);
  return out;
}

template <typename To, typename From>
NetworkParams<To> cast_params(const NetworkParams<From>& from) {
  NetworkParams<To> to;
  to.lstm.resize(from.lstm.size());
  to.dense.resize(from.dense.size());
  to.bn.resize(from.bn.size());
  zip_tensors(TensorSet::all, [](const TensorInfo&, auto& t, const auto& f) { t = f.template cast<To>(); },
              to, from);
  return to;
}

template <typename Scalar>
std::size_t parameter_count(const NetworkParams<Scalar>& p) {
  std::size_t n = 0;
  zip_tensors(TensorSet::trainable, [&](const TensorInfo&, const auto& t) { n += static_cast<std::size_t>(t.size()); },
              p);
  return n;
}

template <typename Scalar>
bool all_finite(const NetworkParams<Scalar>& p) {
  bool ok = true;
  zip_tensors(TensorSet::all, [&](const TensorInfo&, const auto& t) { ok = ok && t.allFinite(); }, p);
  return ok;
}

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1, identity BN.
NetworkParams<double> init_params(const Architecture& arch, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { train, eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kProbabilityFloor = 1e-12;

/// Column-packed batch of variable-length sequences. steps[t] is d x B;
/// columns of samples shorter than t + 1 are zero and never reach the loss.
template <typename Scalar>
struct SequenceBatch {
  std::vector<Mat<Scalar>> steps;
  std::vector<int> lengths;

  Eigen::Index size() const { return static_cast<Eigen::Index>(lengths.size()); }
};

/// Each sequence is d x T (T >= 1).
template <typename Scalar, typename Seq>
SequenceBatch<Scalar> pack_batch(std::span<const Seq* const> sequences) {
  if (sequences.empty()) throw ShapeError("empty batch");
  const Eigen::Index dim = sequences.front()->rows();
  Eigen::Index max_len = 0;
  for (const Seq* s : sequences) {
    if (s->rows() != dim) throw ShapeError("batch sequences disagree on feature dimension");
    if (s->cols() < 1) throw ShapeError("sequence with no time steps");
    if (!s->allFinite()) throw NumericError("non-finite input feature");
    max_len = std::max(max_len, s->cols());
  }
  SequenceBatch<Scalar> batch;
  const auto n = static_cast<Eigen::Index>(sequences.size());
  batch.steps.assign(static_cast<std::size_t>(max_len), Mat<Scalar>::Zero(dim, n));
  for (Eigen::Index b = 0; b < n; ++b) {
    const Seq& s = *sequences[static_cast<std::size_t>(b)];
    batch.lengths.push_back(static_cast<int>(s.cols()));
    for (Eigen::Index t = 0; t < s.cols(); ++t) {
      batch.steps[static_cast<std::size_t>(t)].col(b) = s.col(t).template cast<Scalar>();
    }
  }
  return batch;
}

/// Inverted-dropout multipliers per dense block (0 or 1/(1-rate)), units x B.
template <typename Scalar>
using DropoutMasks = std::vector<Mat<Scalar>>;

template <typename Scalar>
DropoutMasks<Scalar> make_dropout_masks(const Architecture& arch, Eigen::Index batch_size, double rate,
                                        Rng& rng) {
  DropoutMasks<Scalar> masks;
  const Scalar keep_scale = Scalar(1) / Scalar(1.0 - rate);
  for (int units : arch.dense_units) {
    Mat<Scalar> m(units, batch_size);
    for (Eigen::Index b = 0; b < batch_size; ++b) {
      for (Eigen::Index u = 0; u < units; ++u) m(u, b) = rng.uniform() < rate ? Scalar(0) : keep_scale;
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

template <typename Scalar>
struct LstmCache {
  std::vector<Mat<Scalar>> inputs;  // x_t
  std::vector<Mat<Scalar>> gate_i, gate_f, gate_g, gate_o;
  std::vector<Mat<Scalar>> cell, cell_tanh, hidden;
};

template <typename Scalar>
struct DenseCache {
  Mat<Scalar> input;       // in x B
  Mat<Scalar> normalized;  // x-hat
  Vec<Scalar> mean;        // statistics used for normalization
  Vec<Scalar> var;
  Vec<Scalar> inv_std;
  Mat<Scalar> activated;   // BN output before ReLU
  Mat<Scalar> mask;        // dropout multipliers; empty when no dropout
};

/// Everything backward() needs, plus the outputs.
template <typename Scalar>
struct ForwardCache {
  Mode mode = Mode::eval;
  std::vector<int> lengths;
  std::vector<LstmCache<Scalar>> lstm;
  Mat<Scalar> pooled;  // final hidden state of the last LSTM layer, H x B
  std::vector<DenseCache<Scalar>> dense;
  Mat<Scalar> head_input;
  Mat<Scalar> logits;  // classes x B
  Mat<Scalar> probs;   // classes x B

  /// B x classes, rows sum to 1.
  Mat<Scalar> probabilities() const { return probs.transpose(); }
};

namespace detail {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

}  // namespace detail

template <typename Scalar>
ForwardCache<Scalar> forward(const NetworkParams<Scalar>& params, const SequenceBatch<Scalar>& batch, Mode mode,
                             const DropoutMasks<Scalar>* masks = nullptr) {
  using M = Mat<Scalar>;
  const Eigen::Index n = batch.size();
  if (params.lstm.empty()) throw ShapeError("network has no LSTM layer");
  if (batch.steps.empty()) throw ShapeError("empty batch");
  if (batch.steps.front().rows() != params.lstm.front().input_weights.cols()) {
    throw ShapeError("input dimension " + std::to_string(batch.steps.front().rows()) +
                     " does not match network input " +
                     std::to_string(params.lstm.front().input_weights.cols()));
  }
  if (masks && masks->size() != params.dense.size()) throw ShapeError("dropout mask count mismatch");

  ForwardCache<Scalar> cache;
  cache.mode = mode;
  cache.lengths = batch.lengths;
  const std::size_t steps = batch.steps.size();

  const std::vector<M>* layer_input = &batch.steps;
  cache.lstm.resize(params.lstm.size());
  for (std::size_t l = 0; l < params.lstm.size(); ++l) {
    const auto& p = params.lstm[l];
    auto& c = cache.lstm[l];
    const Eigen::Index h = p.units();
    c.inputs = *layer_input;
    for (std::size_t t = 0; t < steps; ++t) {
      M z = p.input_weights * c.inputs[t];
      if (t > 0) z.noalias() += p.recurrent_weights * c.hidden[t - 1];
      z.colwise() += p.bias;
      M i = detail::sigmoid(z.topRows(h).array()).matrix();
      M f = detail::sigmoid(z.middleRows(h, h).array()).matrix();
      M g = z.middleRows(2 * h, h).array().tanh().matrix();
      M o = detail::sigmoid(z.bottomRows(h).array()).matrix();
      M cell = i.cwiseProduct(g);
      if (t > 0) cell += f.cwiseProduct(c.cell[t - 1]);
      M cell_tanh = cell.array().tanh().matrix();
      c.hidden.push_back(o.cwiseProduct(cell_tanh));
      c.gate_i.push_back(std::move(i));
      c.gate_f.push_back(std::move(f));
      c.gate_g.push_back(std::move(g));
      c.gate_o.push_back(std::move(o));
      c.cell.push_back(std::move(cell));
      c.cell_tanh.push_back(std::move(cell_tanh));
    }
    layer_input = &c.hidden;
  }

  const auto& top = cache.lstm.back().hidden;
  cache.pooled.resize(top.front().rows(), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    cache.pooled.col(b) = top[static_cast<std::size_t>(batch.lengths[static_cast<std::size_t>(b)] - 1)].col(b);
  }

  M x = cache.pooled;
  cache.dense.resize(params.dense.size());
  for (std::size_t l = 0; l < params.dense.size(); ++l) {
    const auto& d = params.dense[l];
    const auto& bn = params.bn[l];
    auto& c = cache.dense[l];
    c.input = x;
    M a = d.weights * x;
    a.colwise() += d.bias;
    if (mode == Mode::train) {
      c.mean = a.rowwise().mean();
      c.var = (a.colwise() - c.mean).array().square().rowwise().mean().matrix();
    } else {
      c.mean = bn.running_mean;
      c.var = bn.running_var;
    }
    c.inv_std = (c.var.array() + Scalar(kBatchNormEpsilon)).rsqrt().matrix();
    c.normalized = ((a.colwise() - c.mean).array().colwise() * c.inv_std.array()).matrix();
    c.activated = ((c.normalized.array().colwise() * bn.scale.array()).colwise() + bn.shift.array()).matrix();
    x = c.activated.cwiseMax(Scalar(0));
    if (mode == Mode::train && masks) {
      c.mask = (*masks)[l];
      if (c.mask.rows() != x.rows() || c.mask.cols() != n) throw ShapeError("dropout mask shape mismatch");
      x = x.cwiseProduct(c.mask);
    }
  }

  cache.head_input = x;
  cache.logits = params.head.weights * x;
  cache.logits.colwise() += params.head.bias;
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> col_max = cache.logits.colwise().maxCoeff();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> e =
      (cache.logits.array().rowwise() - col_max).exp();
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> sums = e.colwise().sum();
  cache.probs = (e.rowwise() / sums).matrix();
  return cache;
}

/// Mean over the batch of -ln max(p_true, 1e-12).
template <typename Scalar>
Scalar cross_entropy(const Mat<Scalar>& probs, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.cols()) throw ShapeError("label count mismatch");
  Scalar total(0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    using std::log;
    using std::max;
    total -= log(max(probs(labels[b], static_cast<Eigen::Index>(b)), Scalar(kProbabilityFloor)));
  }
  return total / Scalar(labels.size());
}

struct Regularization {
  double l2_lambda = 1e-4;
  bool l2_on_recurrent = true;
};

/// l2_lambda * sum of squared weight-matrix entries; biases and BN excluded.
template <typename Scalar>
Scalar l2_penalty(const NetworkParams<Scalar>& params, const Regularization& reg) {
  Scalar total(0);
  zip_tensors(TensorSet::trainable,
              [&](const TensorInfo& info, const auto& t) {
                if (!info.is_weight_matrix()) return;
                if (info.kind == TensorKind::recurrent_weight && !reg.l2_on_recurrent) return;
                total += t.squaredNorm();
              },
              params);
  return Scalar(reg.l2_lambda) * total;
}

template <typename Scalar>
Scalar loss(const Mat<Scalar>& probs, std::span<const int> labels, const NetworkParams<Scalar>& params,
            const Regularization& reg) {
  return cross_entropy(probs, labels) + l2_penalty(params, reg);
}

/// Adds the gradient of l2_penalty to `grads`.
template <typename Scalar>
void add_l2_gradient(const NetworkParams<Scalar>& params, const Regularization& reg, NetworkParams<Scalar>& grads) {
  if (reg.l2_lambda == 0.0) return;
  const Scalar two_lambda = Scalar(2) * Scalar(reg.l2_lambda);
  zip_tensors(TensorSet::trainable,
              [&](const TensorInfo& info, auto& g, const auto& p) {
                if (!info.is_weight_matrix()) return;
                if (info.kind == TensorKind::recurrent_weight && !reg.l2_on_recurrent) return;
                g += two_lambda * p;
              },
              grads, params);
}

/// Gradient of the mean cross-entropy of `cache` with respect to every
/// trainable tensor. Works for train-mode caches (batch statistics) and
/// eval-mode caches (fixed running statistics). The L2 term is added when
/// `reg` is given.
template <typename Scalar>
NetworkParams<Scalar> backward(const NetworkParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                               std::span<const int> labels, const Regularization* reg = nullptr) {
  using M = Mat<Scalar>;
  const Eigen::Index n = cache.probs.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("label count mismatch");

  NetworkParams<Scalar> grads = zeros_like(params);

  M dlogits = cache.probs;
  for (Eigen::Index b = 0; b < n; ++b) dlogits(labels[static_cast<std::size_t>(b)], b) -= Scalar(1);
  dlogits /= Scalar(n);
  grads.head.weights.noalias() = dlogits * cache.head_input.transpose();
  grads.head.bias = dlogits.rowwise().sum();
  M dx = params.head.weights.transpose() * dlogits;

  for (std::size_t l = params.dense.size(); l-- > 0;) {
    const auto& c = cache.dense[l];
    const auto& bn = params.bn[l];
    if (c.mask.size() > 0) dx = dx.cwiseProduct(c.mask);
    M dy = (c.activated.array() > Scalar(0)).select(dx, M::Zero(dx.rows(), dx.cols()));
    grads.bn[l].scale = dy.cwiseProduct(c.normalized).rowwise().sum();
    grads.bn[l].shift = dy.rowwise().sum();
    const M dxhat = (dy.array().colwise() * bn.scale.array()).matrix();
    M da;
    if (cache.mode == Mode::train) {
      const Vec<Scalar> sum_dxhat = dxhat.rowwise().sum();
      const Vec<Scalar> sum_dxhat_xhat = dxhat.cwiseProduct(c.normalized).rowwise().sum();
      const M centered = ((Scalar(n) * dxhat).colwise() - sum_dxhat) -
                         (c.normalized.array().colwise() * sum_dxhat_xhat.array()).matrix();
      da = ((centered.array().colwise() * c.inv_std.array()) / Scalar(n)).matrix();
    } else {
      da = (dxhat.array().colwise() * c.inv_std.array()).matrix();
    }
    grads.dense[l].weights.noalias() = da * c.input.transpose();
    grads.dense[l].bias = da.rowwise().sum();
    dx = params.dense[l].weights.transpose() * da;
  }

  // Gradient enters the top LSTM only at each sample's last step.
  const std::size_t steps = cache.lstm.back().hidden.size();
  std::vector<M> dhidden(steps, M::Zero(dx.rows(), n));
  for (Eigen::Index b = 0; b < n; ++b) {
    dhidden[static_cast<std::size_t>(cache.lengths[static_cast<std::size_t>(b)] - 1)].col(b) = dx.col(b);
  }

  for (std::size_t l = params.lstm.size(); l-- > 0;) {
    const auto& p = params.lstm[l];
    const auto& c = cache.lstm[l];
    auto& g = grads.lstm[l];
    const Eigen::Index h = p.units();
    std::vector<M> dinputs(steps);
    M dh_next = M::Zero(h, n);
    M dc_next = M::Zero(h, n);
    for (std::size_t t = steps; t-- > 0;) {
      const M dh = dhidden[t] + dh_next;
      const M d_o = dh.cwiseProduct(c.cell_tanh[t]);
      const M dc = dc_next + dh.cwiseProduct(c.gate_o[t])
                                 .cwiseProduct((Scalar(1) - c.cell_tanh[t].array().square()).matrix());
      M dz(4 * h, n);
      dz.topRows(h) = dc.cwiseProduct(c.gate_g[t]).array() * c.gate_i[t].array() * (Scalar(1) - c.gate_i[t].array());
      if (t > 0) {
        dz.middleRows(h, h) =
            dc.cwiseProduct(c.cell[t - 1]).array() * c.gate_f[t].array() * (Scalar(1) - c.gate_f[t].array());
      } else {
        dz.middleRows(h, h).setZero();
      }
      dz.middleRows(2 * h, h) = dc.cwiseProduct(c.gate_i[t]).array() * (Scalar(1) - c.gate_g[t].array().square());
      dz.bottomRows(h) = d_o.array() * c.gate_o[t].array() * (Scalar(1) - c.gate_o[t].array());

      g.input_weights.noalias() += dz * c.inputs[t].transpose();
      g.bias += dz.rowwise().sum();
      if (t > 0) {
        g.recurrent_weights.noalias() += dz * c.hidden[t - 1].transpose();
        dh_next.noalias() = p.recurrent_weights.transpose() * dz;
        dc_next = dc.cwiseProduct(c.gate_f[t]);
      }
      if (l > 0) dinputs[t].noalias() = p.input_weights.transpose() * dz;
    }
    if (l > 0) dhidden = std::move(dinputs);
  }

  if (reg) add_l2_gradient(params, *reg, grads);
  return grads;
}

/// running = momentum * running + (1 - momentum) * batch, for each BN layer,
/// using the batch statistics stored in a train-mode cache.
template <typename Scalar>
void update_running_stats(NetworkParams<Scalar>& params, const ForwardCache<Scalar>& cache, double momentum) {
  if (cache.mode != Mode::train) return;
  const Scalar m(momentum);
  for (std::size_t l = 0; l < params.bn.size(); ++l) {
    params.bn[l].running_mean = m * params.bn[l].running_mean + (Scalar(1) - m) * cache.dense[l].mean;
    params.bn[l].running_var = m * params.bn[l].running_var + (Scalar(1) - m) * cache.dense[l].var;
  }
}

}  // namespace sequifi
