#include "sequifi/commands.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <mutex>

#include "sequifi/checkpoint.hpp"
#include "sequifi/detail/text.hpp"
#include "sequifi/report.hpp"
#include "sequifi/wav.hpp"

namespace sequifi {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<fs::path> cmd_gen_synth(const fs::path& spec_file, const fs::path& out_dir,
                                    std::optional<std::uint64_t> seed) {
  SynthSpec spec = synth_spec_from_json(read_json_file(spec_file));
  if (seed) spec.seed = *seed;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  std::vector<fs::path> written;
  for (auto& m : gen_synth(spec)) {
    const std::string csv_name = m.name + "_features.csv";
    std::vector<std::pair<std::string, Eigen::MatrixXd>> rows;
    for (const auto& s : m.samples) rows.emplace_back(s.id, s.frames());
    write_features_csv(out_dir / csv_name, rows, false);
    m.features_csv = csv_name;
    m.base_dir = out_dir;
    const fs::path manifest_path = out_dir / (m.name + ".json");
    save_manifest(m, manifest_path);
    written.push_back(manifest_path);
    spdlog::info("wrote {} ({} samples)", manifest_path.string(), m.samples.size());
  }
  return written;
}

Eigen::MatrixXd extract_wav_features(const fs::path& wav, const MfccConfig& cfg) {
  const WavAudio audio = read_wav(wav);
  const Eigen::VectorXd signal = resample_to_16k(audio.samples, audio.sample_rate);
  const Eigen::MatrixXd mfcc = compute_mfcc(signal, cfg);  // frames x ceps
  if (cfg.sequence_mode) return mfcc.transpose();
  return average_pool(mfcc, Provenance::mfcc).values;
}

void materialize_mfcc(DatasetManifest& manifest, const MfccConfig& cfg) {
  validate_mfcc_config(cfg);
  if (cfg.sample_rate != kTargetSampleRate) throw ConfigError("mfcc: sample_rate must be 16000 after resampling");
  std::vector<Eigen::MatrixXd> extracted(manifest.samples.size());
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const Sample& s = manifest.samples[i];
    const auto* ref = std::get_if<WavRef>(&s.source);
    if (!ref) throw DataError(manifest.name + ": sample '" + s.id + "' has no WAV reference to extract");
    try {
      extracted[i] = extract_wav_features(ref->path, cfg);
    } catch (const std::exception& e) {
      throw DataError(manifest.name + ": sample '" + s.id + "': " + e.what());
    }
  }
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) manifest.samples[i].source = std::move(extracted[i]);
  manifest.feature_dim = cfg.num_ceps;
}

fs::path cmd_extract(const fs::path& manifest_path, const MfccConfig& cfg) {
  DatasetManifest m = load_manifest(manifest_path);
  DatasetManifest extracted = m;
  // Re-extract from WAV even if a previous CSV was loaded.
  for (auto& s : extracted.samples) {
    if (s.has_features()) {
      throw DataError(m.name + ": sample '" + s.id + "' has no WAV reference to extract");
    }
  }
  materialize_mfcc(extracted, cfg);

  const std::string csv_name = manifest_path.stem().string() + "_mfcc.csv";
  const fs::path csv_path = manifest_path.parent_path() / csv_name;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> rows;
  for (const auto& s : extracted.samples) rows.emplace_back(s.id, s.frames());

  const fs::path tmp_csv = csv_path.string() + ".tmp";
  write_features_csv(tmp_csv, rows, cfg.sequence_mode);

  // The rewritten manifest keeps the WAV references; the CSV rows take precedence on load.
  m.features_csv = csv_name;
  m.feature_dim = cfg.num_ceps;
  const fs::path tmp_manifest = manifest_path.string() + ".tmp";
  save_manifest(m, tmp_manifest);
  fs::rename(tmp_csv, csv_path);
  fs::rename(tmp_manifest, manifest_path);
  spdlog::info("extracted {} samples of {} into {}", rows.size(), m.name, csv_path.string());
  return csv_path;
}

namespace {

std::string train_log_csv(std::span<const TrainLog> stage_logs) {
  std::string out = "stage,phase,epoch,samples,mean_loss\n";
  for (std::size_t s = 0; s < stage_logs.size(); ++s) {
    for (const auto& e : stage_logs[s].epochs) {
      out += std::to_string(s + 1) + "," + e.phase + "," + std::to_string(e.epoch) + "," + std::to_string(e.samples) +
             "," + detail::format_double(e.mean_loss) + "\n";
    }
  }
  return out;
}

std::string budget_csv(const ChainResult& result) {
  std::string out = "fold,stage,phase,epoch_units\n";
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const auto& logs = result.folds[f].stage_logs;
    for (std::size_t s = 0; s < logs.size(); ++s) {
      std::vector<std::pair<std::string, int>> phases;
      for (const auto& e : logs[s].epochs) {
        if (phases.empty() || phases.back().first != e.phase) phases.emplace_back(e.phase, 0);
        ++phases.back().second;
      }
      for (const auto& [phase, units] : phases) {
        out += std::to_string(f) + "," + std::to_string(s + 1) + "," + phase + "," + std::to_string(units) + "\n";
      }
      out += std::to_string(f) + "," + std::to_string(s + 1) + ",total," + std::to_string(logs[s].epoch_units()) + "\n";
    }
  }
  return out;
}

ordered_json run_metadata(const ExperimentConfig& cfg, const std::vector<DatasetManifest>& manifests,
                          const std::string& hash, const std::string& status) {
  ordered_json meta;
  meta["format"] = "sequifi-run";
  meta["version"] = 1;
  meta["status"] = status;
  meta["strategy"] = std::string(strategy_name(cfg.strategy.tag));
  meta["feature_tag"] = cfg.feature.tag;
  meta["config_hash"] = hash;
  meta["seed"] = cfg.seed;
  meta["folds"] = cfg.folds;
  ordered_json chain = ordered_json::array();
  for (const auto& m : manifests) chain.push_back(m.name);
  meta["chain"] = std::move(chain);
  return meta;
}

}  // namespace

RunOutcome cmd_run(const fs::path& config_file, const RunOverrides& overrides) {
  ExperimentConfig cfg = load_config(config_file);
  if (overrides.seed) {
    cfg.seed = *overrides.seed;
    cfg.training.seed = *overrides.seed;
  }
  if (overrides.out) {
    cfg.output_dir = *overrides.out;
  }
  const fs::path out_dir = overrides.out ? *overrides.out : cfg.resolve(cfg.output_dir);
  const std::string hash = config_hash(cfg);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  fs::remove(out_dir / "error.json", ec);
  write_file_atomic(out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");

  std::vector<DatasetManifest> manifests;
  const auto started = std::chrono::steady_clock::now();
  try {
    for (const auto& p : cfg.chain) {
      DatasetManifest m = load_manifest(cfg.resolve(p));
      if (!m.materialized()) {
        if (cfg.feature.kind != FeatureConfig::Kind::mfcc) {
          throw DataError(m.name + ": samples reference WAV files; set feature.kind to \"mfcc\" or run extract first");
        }
        materialize_mfcc(m, cfg.feature.mfcc);
      }
      manifests.push_back(std::move(m));
    }

    ChainOptions options;
    options.architecture = cfg.architecture;
    options.jobs = overrides.jobs;
    options.on_stage = [&out_dir](const StageRecord& rec) {
      const fs::path fold_dir = out_dir / ("fold_" + std::to_string(rec.fold));
      fs::create_directories(fold_dir);
      const std::string stem = "stage_" + std::to_string(rec.stage + 1);
      save_checkpoint(fold_dir / (stem + ".ckpt.json"), *rec.params, &rec.outcome->adam);
      if (rec.fisher) save_fisher(fold_dir / (stem + ".fisher.json"), *rec.fisher);
      if (rec.replay) save_replay_buffer(fold_dir / (stem + ".replay.json"), *rec.replay);
    };

    const FoldPlan plan = make_fold_plan(derive_seed(cfg.seed, "fold-plan"), cfg.folds);
    ChainResult result = run_chain(manifests, cfg.strategy, cfg.training, plan, options);

    for (std::size_t f = 0; f < result.folds.size(); ++f) {
      write_file_atomic(out_dir / ("fold_" + std::to_string(f)) / "train_log.csv",
                        train_log_csv(result.folds[f].stage_logs));
    }
    write_file_atomic(out_dir / "results_folds.csv", fold_results_csv(result.folds));
    write_file_atomic(out_dir / "results_mean.csv", mean_results_csv(result.mean));
    write_file_atomic(out_dir / "budget.csv", budget_csv(result));
    const RunSummary summary =
        summary_from_matrix(result.mean, std::string(strategy_name(cfg.strategy.tag)), cfg.feature.tag, hash, cfg.folds);
    write_file_atomic(out_dir / "results.md", render_markdown(build_comparison(std::span(&summary, 1))));

    ordered_json meta = run_metadata(cfg, manifests, hash, "complete");
    ordered_json orders = ordered_json::array();
    for (const auto& order : plan.folds) {
      ordered_json o = ordered_json::array();
      for (auto label : order) o.push_back(std::string(label_name(label)));
      orders.push_back(std::move(o));
    }
    meta["class_orders"] = std::move(orders);
    meta["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_file_atomic(out_dir / "run.json", meta.dump(2) + "\n");
    return {out_dir, std::move(result), hash};
  } catch (const std::exception& e) {
    ordered_json err;
    err["status"] = "incomplete";
    err["error"] = e.what();
    err["config_hash"] = hash;
    try {
      write_file_atomic(out_dir / "error.json", err.dump(2) + "\n");
      write_file_atomic(out_dir / "run.json", run_metadata(cfg, manifests, hash, "incomplete").dump(2) + "\n");
    } catch (const std::exception& inner) {
      spdlog::error("could not record failure: {}", inner.what());
    }
    throw;
  }
}

std::string cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run_summary(d));
  const ComparisonTable table = build_comparison(runs);
  const std::string md = render_markdown(table);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_file_atomic(out_dir / "comparison.md", md);
  write_file_atomic(out_dir / "comparison.csv", render_csv(table));
  return md;
}

}  // namespace sequifi
