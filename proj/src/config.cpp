#include "sequifi/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>

namespace sequifi {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  const std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!names.contains(key)) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& context) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

std::string valid_strategy_list() {
  std::string out;
  for (auto tag : kAllStrategies) out += (out.empty() ? "" : ", ") + std::string(strategy_name(tag));
  return out;
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

MfccConfig mfcc_from_json(const json& j) {
  const std::string ctx = "mfcc";
  check_keys(j,
             {"sample_rate", "frame_len_ms", "hop_ms", "fft_size", "num_mel_filters", "num_ceps", "fmin", "fmax",
              "log_floor", "preemphasis", "sequence_mode"},
             ctx);
  MfccConfig c;
  read_opt(j, "sample_rate", c.sample_rate, ctx);
  read_opt(j, "frame_len_ms", c.frame_len_ms, ctx);
  read_opt(j, "hop_ms", c.hop_ms, ctx);
  read_opt(j, "fft_size", c.fft_size, ctx);
  read_opt(j, "num_mel_filters", c.num_mel_filters, ctx);
  read_opt(j, "num_ceps", c.num_ceps, ctx);
  read_opt(j, "fmin", c.fmin, ctx);
  read_opt(j, "fmax", c.fmax, ctx);
  read_opt(j, "log_floor", c.log_floor, ctx);
  read_opt(j, "preemphasis", c.preemphasis, ctx);
  read_opt(j, "sequence_mode", c.sequence_mode, ctx);
  validate_mfcc_config(c);
  return c;
}

ordered_json mfcc_to_json(const MfccConfig& c) {
  ordered_json j;
  j["sample_rate"] = c.sample_rate;
  j["frame_len_ms"] = c.frame_len_ms;
  j["hop_ms"] = c.hop_ms;
  j["fft_size"] = c.fft_size;
  j["num_mel_filters"] = c.num_mel_filters;
  j["num_ceps"] = c.num_ceps;
  j["fmin"] = c.fmin;
  j["fmax"] = c.fmax;
  j["log_floor"] = c.log_floor;
  j["preemphasis"] = c.preemphasis;
  j["sequence_mode"] = c.sequence_mode;
  return j;
}

SynthSpec synth_spec_from_json(const json& j) {
  const std::string ctx = "synth";
  check_keys(j, {"num_datasets", "feature_dim", "samples_per_class", "class_separation", "domain_shift", "noise_std", "seed"},
             ctx);
  SynthSpec s;
  read_opt(j, "num_datasets", s.num_datasets, ctx);
  read_opt(j, "feature_dim", s.feature_dim, ctx);
  read_opt(j, "samples_per_class", s.samples_per_class, ctx);
  read_opt(j, "class_separation", s.class_separation, ctx);
  read_opt(j, "domain_shift", s.domain_shift, ctx);
  read_opt(j, "noise_std", s.noise_std, ctx);
  read_opt(j, "seed", s.seed, ctx);
  validate_synth_spec(s);
  return s;
}

ordered_json synth_spec_to_json(const SynthSpec& s) {
  ordered_json j;
  j["num_datasets"] = s.num_datasets;
  j["feature_dim"] = s.feature_dim;
  j["samples_per_class"] = s.samples_per_class;
  j["class_separation"] = s.class_separation;
  j["domain_shift"] = s.domain_shift;
  j["noise_std"] = s.noise_std;
  j["seed"] = s.seed;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, {"chain", "feature", "strategy", "training", "model", "folds", "output_dir", "seed"}, "config");
  ExperimentConfig c;
  if (!j.contains("chain") || !j.at("chain").is_array()) throw ConfigError("config.chain: array of manifest paths required");
  for (const auto& p : j.at("chain")) {
    if (!p.is_string()) throw ConfigError("config.chain: entries must be strings");
    c.chain.emplace_back(p.get<std::string>());
  }
  if (c.chain.size() < 2 || c.chain.size() > 5) throw ConfigError("config.chain: expected 2 to 5 manifests");

  if (j.contains("feature")) {
    const auto& f = j.at("feature");
    check_keys(f, {"kind", "tag", "mfcc"}, "config.feature");
    std::string kind = "precomputed";
    read_opt(f, "kind", kind, "config.feature");
    if (kind == "precomputed") {
      c.feature.kind = FeatureConfig::Kind::precomputed;
      c.feature.tag = "precomputed";
    } else if (kind == "mfcc") {
      c.feature.kind = FeatureConfig::Kind::mfcc;
      c.feature.tag = "MFCC";
    } else {
      throw ConfigError("config.feature.kind: expected 'precomputed' or 'mfcc', got '" + kind + "'");
    }
    read_opt(f, "tag", c.feature.tag, "config.feature");
    if (f.contains("mfcc")) c.feature.mfcc = mfcc_from_json(f.at("mfcc"));
  }

  if (!j.contains("strategy")) throw ConfigError("config.strategy: required");
  const auto& s = j.at("strategy");
  check_keys(s, {"tag", "epochs_total", "sequifi_epochs_per_class", "ewc_lambda", "fisher_samples", "wa_alpha",
                 "replay_fraction"},
             "config.strategy");
  std::string tag;
  read_opt(s, "tag", tag, "config.strategy");
  const auto parsed = parse_strategy(tag);
  if (!parsed) {
    throw ConfigError("config.strategy.tag: unknown strategy '" + tag + "'; valid tags: " + valid_strategy_list());
  }
  c.strategy.tag = *parsed;
  read_opt(s, "epochs_total", c.strategy.epochs_total, "config.strategy");
  read_opt(s, "sequifi_epochs_per_class", c.strategy.sequifi_epochs_per_class, "config.strategy");
  read_opt(s, "ewc_lambda", c.strategy.ewc_lambda, "config.strategy");
  read_opt(s, "fisher_samples", c.strategy.fisher_samples, "config.strategy");
  read_opt(s, "wa_alpha", c.strategy.wa_alpha, "config.strategy");
  read_opt(s, "replay_fraction", c.strategy.replay_fraction, "config.strategy");
  validate_strategy(c.strategy);

  if (j.contains("training")) {
    const auto& t = j.at("training");
    const std::string ctx = "config.training";
    check_keys(t, {"learning_rate", "batch_size", "l2_lambda", "l2_on_recurrent", "dropout_rate", "bn_momentum", "adam"},
               ctx);
    read_opt(t, "learning_rate", c.training.learning_rate, ctx);
    read_opt(t, "batch_size", c.training.batch_size, ctx);
    read_opt(t, "l2_lambda", c.training.l2_lambda, ctx);
    read_opt(t, "l2_on_recurrent", c.training.l2_on_recurrent, ctx);
    read_opt(t, "dropout_rate", c.training.dropout_rate, ctx);
    read_opt(t, "bn_momentum", c.training.bn_momentum, ctx);
    if (t.contains("adam")) {
      const auto& a = t.at("adam");
      check_keys(a, {"beta1", "beta2", "epsilon"}, ctx + ".adam");
      read_opt(a, "beta1", c.training.adam.beta1, ctx + ".adam");
      read_opt(a, "beta2", c.training.adam.beta2, ctx + ".adam");
      read_opt(a, "epsilon", c.training.adam.epsilon, ctx + ".adam");
    }
  }
  c.training.epochs = c.strategy.epochs_total;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"lstm_units", "dense_units"}, "config.model");
    read_opt(m, "lstm_units", c.architecture.lstm_units, "config.model");
    read_opt(m, "dense_units", c.architecture.dense_units, "config.model");
    if (c.architecture.lstm_units.empty()) throw ConfigError("config.model.lstm_units: at least one layer required");
    for (int u : c.architecture.lstm_units) {
      if (u <= 0) throw ConfigError("config.model.lstm_units: units must be positive");
    }
    for (int u : c.architecture.dense_units) {
      if (u <= 0) throw ConfigError("config.model.dense_units: units must be positive");
    }
  }

  read_opt(j, "folds", c.folds, "config");
  if (c.folds <= 0) throw ConfigError("config.folds: must be positive");
  std::string out_dir = c.output_dir.string();
  read_opt(j, "output_dir", out_dir, "config");
  c.output_dir = out_dir;
  read_opt(j, "seed", c.seed, "config");
  c.training.seed = c.seed;
  validate_train_config(c.training);
  return c;
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  ordered_json chain = ordered_json::array();
  for (const auto& p : c.chain) chain.push_back(p.generic_string());
  j["chain"] = std::move(chain);
  ordered_json f;
  f["kind"] = c.feature.kind == FeatureConfig::Kind::mfcc ? "mfcc" : "precomputed";
  f["tag"] = c.feature.tag;
  if (c.feature.kind == FeatureConfig::Kind::mfcc) f["mfcc"] = mfcc_to_json(c.feature.mfcc);
  j["feature"] = std::move(f);
  ordered_json s;
  s["tag"] = std::string(strategy_name(c.strategy.tag));
  s["epochs_total"] = c.strategy.epochs_total;
  s["sequifi_epochs_per_class"] = c.strategy.sequifi_epochs_per_class;
  s["ewc_lambda"] = c.strategy.ewc_lambda;
  s["fisher_samples"] = c.strategy.fisher_samples;
  s["wa_alpha"] = c.strategy.wa_alpha;
  s["replay_fraction"] = c.strategy.replay_fraction;
  j["strategy"] = std::move(s);
  ordered_json t;
  t["learning_rate"] = c.training.learning_rate;
  t["batch_size"] = c.training.batch_size;
  t["l2_lambda"] = c.training.l2_lambda;
  t["l2_on_recurrent"] = c.training.l2_on_recurrent;
  t["dropout_rate"] = c.training.dropout_rate;
  t["bn_momentum"] = c.training.bn_momentum;
  t["adam"] = {{"beta1", c.training.adam.beta1}, {"beta2", c.training.adam.beta2}, {"epsilon", c.training.adam.epsilon}};
  j["training"] = std::move(t);
  j["model"] = {{"lstm_units", c.architecture.lstm_units}, {"dense_units", c.architecture.dense_units}};
  j["folds"] = c.folds;
  j["output_dir"] = c.output_dir.generic_string();
  j["seed"] = c.seed;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig c = config_from_json(read_json_file(path));
  c.base_dir = path.parent_path();
  return c;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // Where results are written does not change them.
  auto j = config_to_json(cfg);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_text(j.dump())));
  return buf;
}

}  // namespace sequifi
