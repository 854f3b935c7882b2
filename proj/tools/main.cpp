#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "sequifi/commands.hpp"
#include "sequifi/logging.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Sequential class-finetuning experiments for speech emotion recognition"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  std::string manifest;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic multi-dataset corpus");
  gen->add_option("--config", config, "Synthetic spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides the spec seed");

  auto* extract = app.add_subcommand("extract", "Extract MFCC features for a WAV manifest");
  extract->add_option("manifest", manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  extract->add_option("--config", config, "MFCC settings (JSON); defaults when omitted")->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Run a continual-learning chain over all folds");
  run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Overrides the config seed");
  run->add_option("--out", out, "Overrides the output directory");
  run->add_option("--jobs", jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Compare finished runs");
  report->add_option("runs", run_dirs, "Run directories, one per strategy")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  sequifi::configure_logging_from_env();

  try {
    if (*gen) {
      sequifi::cmd_gen_synth(config, out, seed);
    } else if (*extract) {
      sequifi::MfccConfig mfcc;
      if (!config.empty()) mfcc = sequifi::mfcc_from_json(sequifi::read_json_file(config));
      sequifi::cmd_extract(manifest, mfcc);
    } else if (*run) {
      sequifi::RunOverrides overrides;
      overrides.seed = seed;
      if (!out.empty()) overrides.out = fs::path(out);
      overrides.jobs = jobs;
      const auto outcome = sequifi::cmd_run(config, overrides);
      spdlog::info("run complete: {} (config {})", outcome.output_dir.string(), outcome.config_hash);
    } else if (*report) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      std::cout << sequifi::cmd_report(dirs, out);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
