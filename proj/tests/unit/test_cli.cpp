#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>

#include "../support.hpp"
#include "sequifi/commands.hpp"
#include "sequifi/report.hpp"
#include "sequifi/wav.hpp"

using namespace sequifi;
using testing::read_text;
using testing::TempDir;
using testing::write_text;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEQUIFI_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_synth_spec(const fs::path& path, int num_datasets, int per_class = 12) {
  nlohmann::json j{{"num_datasets", num_datasets}, {"feature_dim", 4}, {"samples_per_class", per_class}, {"seed", 5}};
  write_text(path, j.dump());
}

nlohmann::json run_config(const std::string& tag, const fs::path& dir, int folds = 2) {
  nlohmann::json j;
  j["chain"] = {(dir / "synth_0.json").string(), (dir / "synth_1.json").string()};
  j["strategy"] = {{"tag", tag}, {"epochs_total", 8}, {"sequifi_epochs_per_class", 2}};
  j["model"] = {{"lstm_units", {6, 6}}, {"dense_units", {5, 5, 5, 5}}};
  j["folds"] = folds;
  j["seed"] = 17;
  j["output_dir"] = (dir / ("run_" + tag)).string();
  return j;
}

}  // namespace

TEST_CASE("experiment config") {
  TempDir dir("cfg");
  SUBCASE("round trip") {
    const auto cfg = config_from_json(run_config("ewc", dir.path()));
    const auto again = config_from_json(nlohmann::json::parse(config_to_json(cfg).dump()));
    CHECK(config_to_json(again).dump() == config_to_json(cfg).dump());
    CHECK(config_hash(again) == config_hash(cfg));
    CHECK(config_hash(config_from_json(run_config("replay", dir.path()))) != config_hash(cfg));
  }
  SUBCASE("unknown strategy tag lists the valid ones") {
    auto j = run_config("gem", dir.path());
    try {
      config_from_json(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("gem") != std::string::npos);
      for (auto tag : kAllStrategies) CHECK(msg.find(strategy_name(tag)) != std::string::npos);
    }
  }
  SUBCASE("budget rule and unknown keys") {
    auto j = run_config("sequifi", dir.path());
    j["strategy"]["sequifi_epochs_per_class"] = 3;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = run_config("sequifi", dir.path());
    j["learning_rate"] = 0.1;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }
}

TEST_CASE("gen-synth") {
  TempDir a("gs_a");
  TempDir b("gs_b");
  write_synth_spec(a.path() / "spec.json", 2);
  const auto first = cmd_gen_synth(a.path() / "spec.json", a.path() / "out");
  const auto second = cmd_gen_synth(a.path() / "spec.json", b.path());
  REQUIRE(first.size() == 2);
  for (const auto* name : {"synth_0.json", "synth_0_features.csv", "synth_1.json", "synth_1_features.csv"}) {
    CAPTURE(name);
    CHECK(read_text(a.path() / "out" / name) == read_text(b.path() / name));
  }
  const auto m = load_manifest(first[1]);
  CHECK(m.samples.size() == 48);
  CHECK(m.feature_dim == 4);

  write_synth_spec(a.path() / "zero.json", 0);
  CHECK_THROWS_AS(cmd_gen_synth(a.path() / "zero.json", a.path() / "z"), ConfigError);
  CHECK(run_cli("gen-synth --config " + (a.path() / "zero.json").string() + " --out " + (a.path() / "z").string()) != 0);
  CHECK(run_cli("gen-synth --config " + (a.path() / "spec.json").string() + " --out " + (a.path() / "c").string()) == 0);
}

TEST_CASE("extract") {
  TempDir dir("ex");
  nlohmann::json manifest{{"name", "wavs"}, {"feature_dim", 13}};
  for (int i = 0; i < 3; ++i) {
    const int rate = i == 1 ? 44100 : 16000;
    Eigen::VectorXd tone(rate / 2);
    for (Eigen::Index n = 0; n < tone.size(); ++n) tone[n] = 0.3 * std::sin(2 * M_PI * (220.0 * (i + 1)) * n / rate);
    write_wav(dir.path() / ("clip" + std::to_string(i) + ".wav"), tone, rate);
    manifest["samples"].push_back({{"id", "clip" + std::to_string(i)},
                                   {"label", "happy"},
                                   {"wav", "clip" + std::to_string(i) + ".wav"}});
  }
  manifest["split"] = {{"clip0", "train"}, {"clip1", "test"}, {"clip2", "train"}};
  const auto manifest_path = dir.path() / "wavs.json";
  write_text(manifest_path, manifest.dump(2));

  SUBCASE("pooled features, one row per sample, rerun identical") {
    const auto csv = cmd_extract(manifest_path, MfccConfig{});
    const auto text = read_text(csv);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    const auto second_line = text.substr(text.find('\n') + 1);
    const auto row = second_line.substr(0, second_line.find('\n'));
    CHECK(std::count(row.begin(), row.end(), ',') == 13);
    const auto m = load_manifest(manifest_path);
    CHECK(m.materialized());
    CHECK(m.feature_dim == 13);
    CHECK(m.samples[2].frames().cols() == 1);

    write_text(manifest_path, manifest.dump(2));
    CHECK(read_text(cmd_extract(manifest_path, MfccConfig{})) == text);
  }

  SUBCASE("a corrupt WAV names the sample and commits nothing") {
    write_text(dir.path() / "clip1.wav", "RIFF....garbage");
    try {
      cmd_extract(manifest_path, MfccConfig{});
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("clip1") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(dir.path() / "wavs_mfcc.csv"));
    CHECK(read_text(manifest_path) == manifest.dump(2));
    CHECK(run_cli("extract " + manifest_path.string()) != 0);
  }
}

TEST_CASE("run") {
  TempDir dir("run");
  write_synth_spec(dir.path() / "spec.json", 2);
  cmd_gen_synth(dir.path() / "spec.json", dir.path());

  SUBCASE("identical config and seed give identical aggregated results") {
    const auto cfg = run_config("replay", dir.path());
    write_text(dir.path() / "replay.json", cfg.dump());
    RunOverrides o1;
    o1.out = dir.path() / "r1";
    RunOverrides o2;
    o2.out = dir.path() / "r2";
    o2.jobs = 2;
    cmd_run(dir.path() / "replay.json", o1);
    cmd_run(dir.path() / "replay.json", o2);
    CHECK(read_text(dir.path() / "r1" / "results_mean.csv") == read_text(dir.path() / "r2" / "results_mean.csv"));
    CHECK(read_text(dir.path() / "r1" / "results_folds.csv") == read_text(dir.path() / "r2" / "results_folds.csv"));
    CHECK(fs::exists(dir.path() / "r1" / "fold_1" / "stage_2.replay.json"));
    const auto meta = nlohmann::json::parse(read_text(dir.path() / "r1" / "run.json"));
    CHECK(meta.at("status") == "complete");

    RunOverrides o3;
    o3.out = dir.path() / "r3";
    o3.seed = 18;
    cmd_run(dir.path() / "replay.json", o3);
    CHECK(read_text(dir.path() / "r3" / "results_mean.csv") != read_text(dir.path() / "r1" / "results_mean.csv"));
  }

  SUBCASE("sequifi with 15 epochs per class logs 60 epoch-units per stage") {
    auto cfg = run_config("sequifi", dir.path(), 1);
    cfg["strategy"]["epochs_total"] = 60;
    cfg["strategy"]["sequifi_epochs_per_class"] = 15;
    write_text(dir.path() / "seq.json", cfg.dump());
    REQUIRE(run_cli("run --config " + (dir.path() / "seq.json").string()) == 0);
    const auto budget = read_text(dir.path() / "run_sequifi" / "budget.csv");
    CHECK(budget.find("0,1,im,60\n") != std::string::npos);
    for (const auto* label : {"sad", "angry", "neutral", "happy"}) {
      CHECK(budget.find(std::string("0,2,class:") + label + ",15\n") != std::string::npos);
    }
    const auto log = read_text(dir.path() / "run_sequifi" / "fold_0" / "train_log.csv");
    CHECK(std::count(log.begin(), log.end(), '\n') == 1 + 60 + 60);
  }

  SUBCASE("failure leaves an error record and a nonzero exit") {
    auto cfg = run_config("vanilla", dir.path(), 1);
    cfg["chain"][1] = (dir.path() / "missing.json").string();
    write_text(dir.path() / "bad.json", cfg.dump());
    CHECK(run_cli("run --config " + (dir.path() / "bad.json").string()) != 0);
    CHECK(fs::exists(dir.path() / "run_vanilla" / "error.json"));
    const auto meta = nlohmann::json::parse(read_text(dir.path() / "run_vanilla" / "run.json"));
    CHECK(meta.at("status") == "incomplete");
  }
}

TEST_CASE("report") {
  const fs::path fixture = SEQUIFI_FIXTURE_DIR "/reference_runs";
  TempDir out("report");

  SUBCASE("stored table rendered against the golden files") {
    std::vector<fs::path> runs;
    for (const auto* tag : {"sequifi", "replay", "ewc", "weight_avg", "vanilla"}) runs.push_back(fixture / tag);
    const auto md = cmd_report(runs, out.path());
    CHECK(md == read_text(fixture / "expected" / "comparison.md"));
    CHECK(read_text(out.path() / "comparison.csv") == read_text(fixture / "expected" / "comparison.csv"));
    CHECK(md.find("| C | IM (x-vector) | **69.69** | **68.42** | 56.29† | 56.51† |") != std::string::npos);
    CHECK(md.find("| SeQuiFi (x-vector) | **71.12** | **70.65** |") != std::string::npos);
    CHECK(md.find("| Replay (x-vector) | 63.27 | 60.99 |") != std::string::npos);
  }

  SUBCASE("a single run carries every stage-best marker") {
    const std::vector<fs::path> runs{fixture / "ewc"};
    const auto table = build_comparison(std::vector<RunSummary>{load_run_summary(runs[0])});
    REQUIRE(table.rows.size() == 2);
    for (const auto& row : table.rows) {
      for (const auto& c : row.cells) {
        CHECK(c.best_accuracy == c.seen);
        CHECK(c.best_f1 == c.seen);
      }
    }
  }

  SUBCASE("mismatched chains are rejected") {
    auto a = load_run_summary(fixture / "ewc");
    auto b = load_run_summary(fixture / "replay");
    b.datasets.pop_back();
    CHECK_THROWS_AS(build_comparison(std::vector<RunSummary>{a, b}), ConfigError);
  }
}
