#include "sequifi/continual.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <numeric>

#include "sequifi/checkpoint.hpp"

namespace sequifi {

namespace {

constexpr std::array<std::string_view, 5> kStrategyNames{"vanilla", "sequifi", "ewc", "weight_avg", "replay"};
constexpr std::array<std::string_view, 5> kDisplayNames{"FT", "SeQuiFi", "EWC", "WA", "Replay"};

void require_tag(const StrategyConfig& cfg, StrategyTag expected) {
  if (cfg.tag != expected) {
    throw ConfigError("strategy tag '" + std::string(strategy_name(cfg.tag)) + "' passed to " +
                      std::string(strategy_name(expected)) + " fine-tuning");
  }
}

TrainConfig with_epochs(TrainConfig tc, int epochs) {
  tc.epochs = epochs;
  return tc;
}

TrainHooks with_phase(TrainHooks hooks, std::string phase) {
  hooks.phase = std::move(phase);
  return hooks;
}

}  // namespace

std::string_view strategy_name(StrategyTag tag) { return kStrategyNames[static_cast<std::size_t>(tag)]; }
std::string_view strategy_display_name(StrategyTag tag) { return kDisplayNames[static_cast<std::size_t>(tag)]; }

std::optional<StrategyTag> parse_strategy(std::string_view name) {
  for (std::size_t i = 0; i < kStrategyNames.size(); ++i) {
    if (kStrategyNames[i] == name) return static_cast<StrategyTag>(i);
  }
  return std::nullopt;
}

void validate_strategy(const StrategyConfig& cfg) {
  if (cfg.epochs_total < 0) throw ConfigError("strategy: epochs_total must be >= 0");
  if (cfg.sequifi_epochs_per_class < 0) throw ConfigError("strategy: sequifi_epochs_per_class must be >= 0");
  if (cfg.sequifi_epochs_per_class * kNumClasses != cfg.epochs_total) {
    throw ConfigError("strategy: sequifi_epochs_per_class x 4 must equal epochs_total (" +
                      std::to_string(cfg.sequifi_epochs_per_class) + " x 4 != " +
                      std::to_string(cfg.epochs_total) + ")");
  }
  if (!is_permutation(cfg.class_order)) throw ConfigError("strategy: class_order is not a permutation");
  if (!(cfg.ewc_lambda >= 0.0)) throw ConfigError("strategy: ewc_lambda must be nonnegative");
  if (cfg.fisher_samples < 0) throw ConfigError("strategy: fisher_samples must be >= 0");
  if (!(cfg.wa_alpha >= 0.0 && cfg.wa_alpha <= 1.0)) throw ConfigError("strategy: wa_alpha must be in [0, 1]");
  if (!(cfg.replay_fraction > 0.0 && cfg.replay_fraction <= 1.0)) {
    throw ConfigError("strategy: replay_fraction must be in (0, 1]");
  }
}

StageOutcome vanilla_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                              const TrainConfig& tc, const TrainHooks& hooks) {
  const auto samples = split_side(dataset, SplitSide::train);
  if (samples.empty()) throw DataError(dataset.name + ": empty train split");
  auto r = train(prev, samples, with_epochs(tc, cfg.epochs_total), hooks);
  return {std::move(r.params), std::move(r.log), std::move(r.adam)};
}

StageOutcome sequifi_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                              const TrainConfig& tc, const TrainHooks& hooks) {
  require_tag(cfg, StrategyTag::sequifi);
  if (!is_permutation(cfg.class_order)) throw ConfigError("sequifi: class_order is not a permutation");

  StageOutcome out{prev, {}, fresh_adam_state(prev)};
  bool trained_any = false;
  for (std::size_t j = 0; j < cfg.class_order.size(); ++j) {
    const EmotionLabel label = cfg.class_order[j];
    const auto subset = class_subset(dataset, label, SplitSide::train);
    if (subset.empty()) {
      spdlog::warn("{}: no train samples of class '{}', skipping its phase", dataset.name, label_name(label));
      continue;
    }
    TrainConfig phase_cfg = with_epochs(tc, cfg.sequifi_epochs_per_class);
    if (j > 0) phase_cfg.seed = derive_seed(tc.seed, "sequifi-phase", j);
    auto r = train(out.params, subset, phase_cfg, with_phase(hooks, "class:" + std::string(label_name(label))));
    out.params = std::move(r.params);
    out.adam = std::move(r.adam);
    out.log.append(r.log);
    trained_any = true;
  }
  if (!trained_any) throw DataError(dataset.name + ": all four class subsets of the train split are empty");
  return out;
}

std::vector<std::size_t> fisher_draws(std::size_t population, int n, std::uint64_t seed) {
  if (n <= 0) throw ConfigError("fisher: number of draws must be positive");
  if (population == 0) throw DataError("fisher: empty sample set");
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm(population);
  for (std::uint64_t pass = 0; out.size() < static_cast<std::size_t>(n); ++pass) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "fisher-draws", pass));
    rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t i : perm) {
      if (out.size() == static_cast<std::size_t>(n)) break;
      out.push_back(i);
    }
  }
  return out;
}

Eigen::VectorXd flatten(const Params& params, TensorSet set) {
  Eigen::VectorXd flat;
  std::vector<double> values;
  zip_tensors(set, [&](const TensorInfo&, const auto& t) { values.insert(values.end(), t.data(), t.data() + t.size()); },
              params);
  flat = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return flat;
}

void unflatten(const Eigen::VectorXd& flat, Params& params, TensorSet set) {
  Eigen::Index at = 0;
  zip_tensors(set,
              [&](const TensorInfo& info, auto& t) {
                if (at + t.size() > flat.size()) throw ShapeError("unflatten: vector too short at " + info.name);
                std::copy(flat.data() + at, flat.data() + at + t.size(), t.data());
                at += t.size();
              },
              params);
  if (at != flat.size()) throw ShapeError("unflatten: vector too long");
}

Params log_likelihood_gradient(const Params& params, const Sample& sample) {
  const Mat<double>* seq = &sample.frames();
  const auto batch = pack_batch<double, Mat<double>>(std::span<const Mat<double>* const>(&seq, 1));
  const auto cache = forward(params, batch, Mode::eval);
  const int label = to_code(sample.label);
  // backward() differentiates -ln p; negate for the log-likelihood.
  Params g = backward(params, cache, std::span<const int>(&label, 1));
  zip_tensors(TensorSet::trainable, [](const TensorInfo&, auto& t) { t = -t; }, g);
  return g;
}

FisherInfo estimate_fisher(const Params& params, std::span<const Sample> samples, int n, std::uint64_t seed) {
  if (n < 0) throw ConfigError("fisher: fisher_samples must be >= 0");
  if (samples.empty()) throw DataError("fisher: empty sample set");
  const int draws_count = n == 0 ? static_cast<int>(samples.size()) : n;
  const auto draws = fisher_draws(samples.size(), draws_count, seed);
  const Eigen::VectorXd mean_sq = mean_squared_gradient(
      std::span<const std::size_t>(draws),
      [&](std::size_t i) { return flatten(log_likelihood_gradient(params, samples[i])); });
  FisherInfo info{zeros_like(params), params};
  unflatten(mean_sq, info.fisher);
  return info;
}

double ewc_penalty(const Params& params, std::span<const FisherInfo> fishers, double lambda) {
  double total = 0.0;
  for (const auto& f : fishers) {
    if (!same_shape(params, f.fisher) || !same_shape(params, f.anchor)) {
      throw ShapeError("ewc: Fisher shape does not match parameters");
    }
    zip_tensors(TensorSet::trainable,
                [&](const TensorInfo&, const auto& p, const auto& fi, const auto& a) {
                  total += (fi.array() * (p - a).array().square()).sum();
                },
                params, f.fisher, f.anchor);
  }
  return 0.5 * lambda * total;
}

void add_ewc_gradient(const Params& params, std::span<const FisherInfo> fishers, double lambda, Params& grads) {
  for (const auto& f : fishers) {
    if (!same_shape(params, f.fisher) || !same_shape(params, f.anchor) || !same_shape(params, grads)) {
      throw ShapeError("ewc: Fisher shape does not match parameters");
    }
    zip_tensors(TensorSet::trainable,
                [&](const TensorInfo&, auto& g, const auto& p, const auto& fi, const auto& a) {
                  g.array() += lambda * fi.array() * (p - a).array();
                },
                grads, params, f.fisher, f.anchor);
  }
}

StageOutcome ewc_finetune(const Params& prev, std::span<const FisherInfo> fishers, const DatasetManifest& dataset,
                          const StrategyConfig& cfg, const TrainConfig& tc, const TrainHooks& hooks) {
  require_tag(cfg, StrategyTag::ewc);
  for (const auto& f : fishers) {
    if (!same_shape(prev, f.fisher) || !same_shape(prev, f.anchor)) {
      throw ShapeError("ewc: Fisher shape does not match parameters");
    }
  }
  TrainHooks h = hooks;
  if (cfg.ewc_lambda != 0.0 && !fishers.empty()) {
    const double lambda = cfg.ewc_lambda;
    h.penalty = [fishers, lambda, inner = hooks.penalty](const Params& p, Params& g) {
      double value = inner ? inner(p, g) : 0.0;
      add_ewc_gradient(p, fishers, lambda, g);
      return value + ewc_penalty(p, fishers, lambda);
    };
  }
  const auto samples = split_side(dataset, SplitSide::train);
  if (samples.empty()) throw DataError(dataset.name + ": empty train split");
  auto r = train(prev, samples, with_epochs(tc, cfg.epochs_total), h);
  return {std::move(r.params), std::move(r.log), std::move(r.adam)};
}

Params weight_average(const Params& old_params, const Params& new_params, double alpha) {
  if (!same_shape(old_params, new_params)) throw ShapeError("weight_average: parameter shapes differ");
  Params out = old_params;
  zip_tensors(TensorSet::all,
              [alpha](const TensorInfo&, auto& o, const auto& a, const auto& b) {
                o = (alpha * a.array() + (1.0 - alpha) * b.array()).matrix();
              },
              out, old_params, new_params);
  return out;
}

StageOutcome weight_avg_finetune(const Params& prev, const DatasetManifest& dataset, const StrategyConfig& cfg,
                                 const TrainConfig& tc, const TrainHooks& hooks) {
  require_tag(cfg, StrategyTag::weight_avg);
  StageOutcome tuned = vanilla_finetune(prev, dataset, cfg, tc, hooks);
  tuned.params = weight_average(prev, tuned.params, cfg.wa_alpha);
  return tuned;
}

ReplayBuffer build_replay_buffer(std::span<const DatasetManifest> previous, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("replay: fraction must be in (0, 1]");
  ReplayBuffer buffer;
  for (const auto& m : previous) {
    auto& counts = buffer.counts[m.name];
    counts.fill(0);
    for (int c = 0; c < kNumClasses; ++c) {
      const auto pool = class_subset(m, static_cast<EmotionLabel>(c), SplitSide::train);
      const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pool.size())));
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      Rng rng(derive_seed(seed, "replay:" + m.name, static_cast<std::uint64_t>(c)));
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(k);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) buffer.samples.push_back(pool[i]);
      counts[static_cast<std::size_t>(c)] = static_cast<int>(k);
    }
  }
  return buffer;
}

StageOutcome replay_finetune(const Params& prev, const ReplayBuffer& buffer, const DatasetManifest& dataset,
                             const StrategyConfig& cfg, const TrainConfig& tc, const TrainHooks& hooks) {
  require_tag(cfg, StrategyTag::replay);
  auto samples = split_side(dataset, SplitSide::train);
  samples.insert(samples.end(), buffer.samples.begin(), buffer.samples.end());
  if (samples.empty()) throw DataError(dataset.name + ": replay union is empty");
  auto r = train(prev, samples, with_epochs(tc, cfg.epochs_total), hooks);
  return {std::move(r.params), std::move(r.log), std::move(r.adam)};
}

void save_fisher(const std::filesystem::path& path, const FisherInfo& info) {
  nlohmann::ordered_json doc;
  doc["format"] = "sequifi-fisher";
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = architecture_to_json(info.fisher.architecture());
  doc["fisher"] = tensors_to_json(info.fisher, TensorSet::trainable);
  doc["anchor"] = tensors_to_json(info.anchor, TensorSet::all);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write Fisher snapshot " + path.string());
  out << doc.dump() << '\n';
}

void save_replay_buffer(const std::filesystem::path& path, const ReplayBuffer& buffer) {
  nlohmann::ordered_json doc;
  doc["format"] = "sequifi-replay-buffer";
  doc["version"] = kCheckpointVersion;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& [name, c] : buffer.counts) counts[name] = c;
  doc["counts"] = std::move(counts);
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (const auto& s : buffer.samples) {
    samples.push_back({{"dataset", s.dataset_id}, {"id", s.id}, {"label", std::string(label_name(s.label))}});
  }
  doc["samples"] = std::move(samples);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write replay buffer " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace sequifi
