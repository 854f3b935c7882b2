#include "sequifi/evalkit.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "sequifi/detail/text.hpp"

namespace sequifi {

Metrics metrics_from_confusion(const Confusion& confusion) {
  Metrics m;
  m.confusion = confusion;
  const auto total = confusion.sum();
  if (total <= 0) throw DataError("metrics: empty confusion matrix");
  m.accuracy = static_cast<double>(confusion.trace()) / static_cast<double>(total);
  double f1_sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto tp = static_cast<double>(confusion(c, c));
    const auto predicted = static_cast<double>(confusion.col(c).sum());
    const auto actual = static_cast<double>(confusion.row(c).sum());
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.class_f1[static_cast<std::size_t>(c)] = f1;
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / kNumClasses;
  return m;
}

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("metrics: label vectors differ in length");
  if (truth.empty()) throw DataError("metrics: no labels");
  Confusion confusion = Confusion::Zero();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses) {
      throw DataError("metrics: label outside 0..3 at position " + std::to_string(i));
    }
    ++confusion(t, p);
  }
  return metrics_from_confusion(confusion);
}

std::vector<std::vector<int>> sample_permutations(int num_labels, int count, std::uint64_t seed) {
  if (num_labels <= 0) throw ConfigError("fold plan: need at least one label");
  if (count <= 0) throw ConfigError("fold plan: need at least one fold");
  std::uint64_t available = 1;
  for (int k = 2; k <= num_labels && available <= static_cast<std::uint64_t>(count); ++k) available *= k;
  if (static_cast<std::uint64_t>(count) > available) {
    throw ConfigError("fold plan: " + std::to_string(count) + " folds requested but " + std::to_string(num_labels) +
                      " labels admit only " + std::to_string(available) + " distinct orders");
  }
  // Partial Fisher-Yates over the lexicographic enumeration: uniform, without replacement.
  std::vector<std::vector<int>> all;
  std::vector<int> perm(static_cast<std::size_t>(num_labels));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    all.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  Rng rng(derive_seed(seed, "fold-plan"));
  for (int i = 0; i < count; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.below(all.size() - static_cast<std::size_t>(i));
    std::swap(all[static_cast<std::size_t>(i)], all[j]);
  }
  all.resize(static_cast<std::size_t>(count));
  return all;
}

FoldPlan make_fold_plan(std::uint64_t seed, int folds) {
  FoldPlan plan;
  plan.seed = seed;
  for (const auto& p : sample_permutations(kNumClasses, folds, seed)) {
    ClassOrder order{};
    for (int i = 0; i < kNumClasses; ++i) order[static_cast<std::size_t>(i)] = static_cast<EmotionLabel>(p[static_cast<std::size_t>(i)]);
    plan.folds.push_back(order);
  }
  return plan;
}

std::vector<std::string> stage_labels(std::span<const std::string> datasets) {
  std::set<char> initials;
  bool unique = true;
  for (const auto& d : datasets) {
    if (d.empty() || !initials.insert(static_cast<char>(std::toupper(static_cast<unsigned char>(d[0])))).second) {
      unique = false;
    }
  }
  std::vector<std::string> labels;
  std::string acc;
  for (const auto& d : datasets) {
    const std::string part = unique ? std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(d[0])))) : d;
    acc = acc.empty() ? part : acc + "+" + part;
    labels.push_back(acc);
  }
  return labels;
}

EvalMatrix empty_eval_matrix(std::span<const std::string> datasets) {
  EvalMatrix m;
  m.datasets.assign(datasets.begin(), datasets.end());
  m.stage_labels = stage_labels(datasets);
  const std::size_t n = datasets.size();
  m.cells.assign(n, std::vector<Metrics>(n));
  m.seen.assign(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.seen[i][j] = true;
  }
  return m;
}

EvalMatrix aggregate_folds(std::span<const EvalMatrix> per_fold) {
  if (per_fold.empty()) throw ShapeError("aggregate_folds: no folds");
  EvalMatrix out = per_fold.front();
  for (const auto& f : per_fold) {
    if (f.datasets != out.datasets || f.cells.size() != out.cells.size()) {
      throw ShapeError("aggregate_folds: fold matrices differ in shape");
    }
    for (std::size_t i = 0; i < f.cells.size(); ++i) {
      if (f.cells[i].size() != out.cells[i].size()) throw ShapeError("aggregate_folds: fold matrices differ in shape");
    }
  }
  const auto n = static_cast<double>(per_fold.size());
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    for (std::size_t j = 0; j < out.cells[i].size(); ++j) {
      Metrics agg;
      agg.confusion.setZero();
      for (const auto& f : per_fold) {
        const Metrics& c = f.cells[i][j];
        agg.accuracy += c.accuracy;
        agg.macro_f1 += c.macro_f1;
        for (std::size_t k = 0; k < agg.class_f1.size(); ++k) agg.class_f1[k] += c.class_f1[k];
        agg.confusion += c.confusion;
      }
      agg.accuracy /= n;
      agg.macro_f1 /= n;
      for (auto& v : agg.class_f1) v /= n;
      out.cells[i][j] = agg;
    }
  }
  return out;
}

namespace {

Metrics evaluate(const Params& params, const DatasetManifest& manifest) {
  const auto test = split_side(manifest, SplitSide::test);
  return compute_metrics(label_codes(test), predict(params, test));
}

FoldResult run_fold(std::span<const DatasetManifest> manifests, const StrategyConfig& strategy,
                    const TrainConfig& train_cfg, const ClassOrder& order, int fold, const ChainOptions& options) {
  const std::uint64_t root = train_cfg.seed;
  const auto k = static_cast<std::uint64_t>(fold);
  std::vector<std::string> names;
  for (const auto& m : manifests) names.push_back(m.name);

  FoldResult result;
  result.matrix = empty_eval_matrix(names);

  Architecture arch = options.architecture;
  arch.input_dim = manifests.front().feature_dim;
  arch.num_classes = kNumClasses;

  StrategyConfig sc = strategy;
  sc.class_order = order;
  sc.seed = derive_seed(root, "fold-strategy", k);

  TrainHooks hooks;
  hooks.record_batches = options.record_batches;

  std::vector<FisherInfo> fishers;
  Params params;
  for (std::size_t s = 0; s < manifests.size(); ++s) {
    const DatasetManifest& current = manifests[s];
    TrainConfig tc = train_cfg;
    tc.seed = derive_seed(root, "fold-train", k, s);
    StageOutcome outcome;
    ReplayBuffer buffer;
    bool used_buffer = false;
    try {
      if (s == 0) {
        const auto samples = split_side(current, SplitSide::train);
        if (samples.empty()) throw DataError(current.name + ": empty train split");
        tc.epochs = strategy.epochs_total;
        hooks.phase = "im";
        auto r = train(init_params(arch, derive_seed(root, "fold-init", k)), samples, tc, hooks);
        outcome = {std::move(r.params), std::move(r.log), std::move(r.adam)};
      } else {
        hooks.phase = std::string(strategy_name(sc.tag));
        switch (sc.tag) {
          case StrategyTag::vanilla:
            outcome = vanilla_finetune(params, current, sc, tc, hooks);
            break;
          case StrategyTag::sequifi:
            outcome = sequifi_finetune(params, current, sc, tc, hooks);
            break;
          case StrategyTag::ewc:
            outcome = ewc_finetune(params, fishers, current, sc, tc, hooks);
            break;
          case StrategyTag::weight_avg:
            outcome = weight_avg_finetune(params, current, sc, tc, hooks);
            break;
          case StrategyTag::replay:
            buffer = build_replay_buffer(manifests.subspan(0, s), sc.replay_fraction, sc.seed);
            used_buffer = true;
            outcome = replay_finetune(params, buffer, current, sc, tc, hooks);
            break;
        }
      }
      params = outcome.params;

      const FisherInfo* consolidated = nullptr;
      if (sc.tag == StrategyTag::ewc && s + 1 < manifests.size()) {
        fishers.push_back(estimate_fisher(params, split_side(current, SplitSide::train), sc.fisher_samples,
                                          derive_seed(root, "fold-fisher", k, s)));
        consolidated = &fishers.back();
      }

      for (std::size_t d = 0; d < manifests.size(); ++d) {
        result.matrix.cells[s][d] = evaluate(params, manifests[d]);
      }
      SPDLOG_INFO("fold {} stage {} ({}): {} epoch-units, accuracy on {} = {:.4f}", fold, s + 1,
                  result.matrix.stage_labels[s], outcome.log.epoch_units(), current.name,
                  result.matrix.cells[s][s].accuracy);
      if (options.on_stage) {
        options.on_stage(StageRecord{fold, static_cast<int>(s), &params, &outcome, consolidated,
                                     used_buffer ? &buffer : nullptr});
      }
    } catch (const std::exception& e) {
      throw Error("fold " + std::to_string(fold) + " stage " + std::to_string(s + 1) + " (" + current.name +
                  "): " + e.what());
    }
    result.stage_logs.push_back(std::move(outcome.log));
  }
  return result;
}

}  // namespace

ChainResult run_chain(std::span<const DatasetManifest> manifests, const StrategyConfig& strategy,
                      const TrainConfig& train_cfg, const FoldPlan& plan, const ChainOptions& options) {
  if (manifests.size() < 2 || manifests.size() > 5) throw ConfigError("run_chain: chain must hold 2 to 5 datasets");
  validate_strategy(strategy);
  validate_train_config(train_cfg);
  if (plan.folds.empty()) throw ConfigError("run_chain: fold plan is empty");
  for (const auto& order : plan.folds) {
    if (!is_permutation(order)) throw ConfigError("run_chain: fold plan entry is not a class permutation");
  }
  std::set<std::string> names;
  for (const auto& m : manifests) {
    if (m.feature_dim != manifests.front().feature_dim) {
      throw ShapeError("run_chain: dimension mismatch, " + m.name + " has feature_dim " +
                       std::to_string(m.feature_dim) + ", " + manifests.front().name + " has " +
                       std::to_string(manifests.front().feature_dim));
    }
    if (!names.insert(m.name).second) throw ConfigError("run_chain: duplicate dataset name " + m.name);
    if (!m.materialized()) throw DataError("run_chain: " + m.name + " has samples without extracted features");
  }

  const std::size_t folds = plan.folds.size();
  ChainResult result;
  result.folds.resize(folds);
  std::vector<std::exception_ptr> errors(folds);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t f = next++; f < folds; f = next++) {
      try {
        result.folds[f] = run_fold(manifests, strategy, train_cfg, plan.folds[f], static_cast<int>(f), options);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const auto jobs = static_cast<std::size_t>(std::clamp(options.jobs, 1, static_cast<int>(folds)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<EvalMatrix> matrices;
  for (const auto& f : result.folds) matrices.push_back(f.matrix);
  result.mean = aggregate_folds(matrices);
  return result;
}

namespace {

void append_rows(std::string& out, const EvalMatrix& m, const std::string& fold) {
  for (std::size_t s = 0; s < m.cells.size(); ++s) {
    for (std::size_t d = 0; d < m.datasets.size(); ++d) {
      const Metrics& c = m.cells[s][d];
      out += m.stage_labels[s] + "," + m.datasets[d] + "," + (m.seen[s][d] ? "true" : "false") + "," + fold + "," +
             detail::format_double(c.accuracy) + "," + detail::format_double(c.macro_f1) + "\n";
    }
  }
}

constexpr const char* kResultsHeader = "stage,dataset,seen,fold,accuracy,macro_f1\n";

}  // namespace

std::string fold_results_csv(std::span<const FoldResult> folds) {
  std::string out = kResultsHeader;
  for (std::size_t f = 0; f < folds.size(); ++f) append_rows(out, folds[f].matrix, std::to_string(f));
  return out;
}

std::string mean_results_csv(const EvalMatrix& mean) {
  std::string out = kResultsHeader;
  append_rows(out, mean, "mean");
  return out;
}

}  // namespace sequifi
