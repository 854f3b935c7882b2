#include "sequifi/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>

#include "sequifi/detail/text.hpp"

namespace sequifi {

namespace {

std::string percent(double fraction) { return detail::format_fixed(100.0 * fraction, 2); }

std::size_t strategy_rank(const std::string& tag) {
  // Row order within a stage follows the usual presentation: FT, WA, EWC, Replay, SeQuiFi.
  static const std::vector<std::string> order{"vanilla", "weight_avg", "ewc", "replay", "sequifi"};
  const auto it = std::find(order.begin(), order.end(), tag);
  return static_cast<std::size_t>(it - order.begin());
}

std::string display_name(const std::string& tag) {
  if (const auto parsed = parse_strategy(tag)) return std::string(strategy_display_name(*parsed));
  return tag;
}

}  // namespace

RunSummary summary_from_matrix(const EvalMatrix& mean, std::string strategy, std::string feature_tag,
                               std::string config_hash, int folds) {
  RunSummary r;
  r.strategy = std::move(strategy);
  r.feature_tag = std::move(feature_tag);
  r.config_hash = std::move(config_hash);
  r.folds = folds;
  r.datasets = mean.datasets;
  r.stage_labels = mean.stage_labels;
  for (std::size_t s = 0; s < mean.cells.size(); ++s) {
    std::vector<double> acc;
    std::vector<double> f1;
    for (const auto& c : mean.cells[s]) {
      acc.push_back(c.accuracy);
      f1.push_back(c.macro_f1);
    }
    r.accuracy.push_back(std::move(acc));
    r.macro_f1.push_back(std::move(f1));
    r.seen.push_back(mean.seen[s]);
  }
  return r;
}

RunSummary load_run_summary(const std::filesystem::path& run_dir) {
  const auto meta_path = run_dir / "run.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw DataError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }

  RunSummary r;
  try {
    if (meta.value("status", std::string{"complete"}) != "complete") {
      throw DataError(run_dir.string() + ": run is marked incomplete");
    }
    r.strategy = meta.at("strategy").get<std::string>();
    r.feature_tag = meta.at("feature_tag").get<std::string>();
    r.config_hash = meta.value("config_hash", std::string{});
    r.folds = meta.at("folds").get<int>();
    r.datasets = meta.at("chain").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }

  const auto csv_path = run_dir / "results_mean.csv";
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("stage,dataset,seen,fold,accuracy,macro_f1", 0) != 0) {
    throw DataError(csv_path.string() + ": unexpected header");
  }
  std::map<std::string, std::size_t> stage_index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string at = csv_path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 6) throw DataError(at + ": expected 6 columns");
    const std::string stage(cells[0]);
    const std::string dataset(cells[1]);
    const auto d_it = std::find(r.datasets.begin(), r.datasets.end(), dataset);
    if (d_it == r.datasets.end()) throw DataError(at + ": dataset '" + dataset + "' not in the run's chain");
    const auto d = static_cast<std::size_t>(d_it - r.datasets.begin());
    const auto acc = detail::parse_double(cells[4]);
    const auto f1 = detail::parse_double(cells[5]);
    if (!acc || !f1) throw DataError(at + ": non-numeric metric");
    auto [it, inserted] = stage_index.emplace(stage, r.stage_labels.size());
    if (inserted) {
      r.stage_labels.push_back(stage);
      r.accuracy.emplace_back(r.datasets.size(), 0.0);
      r.macro_f1.emplace_back(r.datasets.size(), 0.0);
      r.seen.emplace_back(r.datasets.size(), false);
    }
    r.accuracy[it->second][d] = *acc;
    r.macro_f1[it->second][d] = *f1;
    r.seen[it->second][d] = cells[2] == "true";
  }
  if (r.stage_labels.empty()) throw DataError(csv_path.string() + ": no result rows");
  return r;
}

ComparisonTable build_comparison(std::span<const RunSummary> runs) {
  if (runs.empty()) throw ConfigError("report: no runs given");
  ComparisonTable table;
  table.datasets = runs.front().datasets;
  for (const auto& r : runs) {
    if (r.datasets != table.datasets) throw ConfigError("report: mismatched chains across runs");
    if (r.folds != runs.front().folds) throw ConfigError("report: runs used different fold counts");
  }

  // Stage order: union of stage labels, by first appearance, ordered by chain prefix length.
  for (const auto& r : runs) {
    for (const auto& s : r.stage_labels) {
      if (std::find(table.stages.begin(), table.stages.end(), s) == table.stages.end()) table.stages.push_back(s);
    }
  }
  const auto chain_labels = stage_labels(table.datasets);
  std::stable_sort(table.stages.begin(), table.stages.end(), [&](const std::string& a, const std::string& b) {
    return std::find(chain_labels.begin(), chain_labels.end(), a) <
           std::find(chain_labels.begin(), chain_labels.end(), b);
  });

  std::vector<std::size_t> order(runs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return strategy_rank(runs[a].strategy) < strategy_rank(runs[b].strategy);
  });

  const auto make_row = [&](const RunSummary& r, std::size_t s, std::string model) {
    ComparisonRow row;
    row.stage = r.stage_labels[s];
    row.model = std::move(model);
    row.feature_tag = r.feature_tag;
    row.config_hash = r.config_hash;
    for (std::size_t d = 0; d < table.datasets.size(); ++d) {
      row.cells.push_back({r.accuracy[s][d], r.macro_f1[s][d], r.seen[s][d], false, false});
    }
    return row;
  };

  for (std::size_t stage_pos = 0; stage_pos < table.stages.size(); ++stage_pos) {
    const std::string& stage = table.stages[stage_pos];
    const bool initial = !chain_labels.empty() && stage == chain_labels.front();
    std::vector<std::string> im_tags;
    const std::size_t first_row = table.rows.size();
    for (std::size_t i : order) {
      const RunSummary& r = runs[i];
      const auto s_it = std::find(r.stage_labels.begin(), r.stage_labels.end(), stage);
      if (s_it == r.stage_labels.end()) continue;
      const auto s = static_cast<std::size_t>(s_it - r.stage_labels.begin());
      if (initial) {
        if (std::find(im_tags.begin(), im_tags.end(), r.feature_tag) != im_tags.end()) continue;
        im_tags.push_back(r.feature_tag);
        table.rows.push_back(make_row(r, s, "IM (" + r.feature_tag + ")"));
      } else {
        table.rows.push_back(make_row(r, s, display_name(r.strategy) + " (" + r.feature_tag + ")"));
      }
    }

    // Best-in-stage marks among rows sharing a feature tag, seen columns only.
    for (std::size_t d = 0; d < table.datasets.size(); ++d) {
      std::map<std::string, std::pair<double, double>> best;
      for (std::size_t i = first_row; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const auto& c = row.cells[d];
        if (!c.seen) continue;
        auto [it, inserted] = best.emplace(row.feature_tag, std::make_pair(c.accuracy, c.macro_f1));
        if (!inserted) {
          it->second.first = std::max(it->second.first, c.accuracy);
          it->second.second = std::max(it->second.second, c.macro_f1);
        }
      }
      for (std::size_t i = first_row; i < table.rows.size(); ++i) {
        auto& row = table.rows[i];
        auto& c = row.cells[d];
        if (!c.seen) continue;
        const auto& b = best.at(row.feature_tag);
        c.best_accuracy = c.accuracy == b.first;
        c.best_f1 = c.macro_f1 == b.second;
      }
    }
  }
  return table;
}

std::string render_markdown(const ComparisonTable& table) {
  std::string out = "| SD | Model |";
  for (const auto& d : table.datasets) out += " " + d + " A | " + d + " F1 |";
  out += "\n|---|---|";
  for (std::size_t d = 0; d < table.datasets.size(); ++d) out += "---:|---:|";
  out += "\n";
  std::string previous_stage;
  for (const auto& row : table.rows) {
    out += "| " + (row.stage == previous_stage ? std::string{} : row.stage) + " | " + row.model + " |";
    previous_stage = row.stage;
    for (const auto& c : row.cells) {
      const auto render = [&](double v, bool best) {
        std::string text = percent(v);
        if (best) text = "**" + text + "**";
        if (!c.seen) text += "†";
        return " " + text + " |";
      };
      out += render(c.accuracy, c.best_accuracy);
      out += render(c.macro_f1, c.best_f1);
    }
    out += "\n";
  }
  out += "\nA: accuracy (%), F1: macro-F1 (%). **Bold**: best in stage for the feature type. "
         "†: unseen dataset (zero-shot).\n";
  std::vector<std::string> hashes;
  for (const auto& row : table.rows) {
    if (!row.config_hash.empty() && std::find(hashes.begin(), hashes.end(), row.config_hash) == hashes.end()) {
      hashes.push_back(row.config_hash);
    }
  }
  if (!hashes.empty()) {
    out += "\nConfig hashes:";
    for (const auto& h : hashes) out += " " + h;
    out += "\n";
  }
  return out;
}

std::string render_csv(const ComparisonTable& table) {
  std::string out = "stage,model,config_hash";
  for (const auto& d : table.datasets) out += "," + d + "_A," + d + "_F1," + d + "_mark";
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.stage + "," + row.model + "," + row.config_hash;
    for (const auto& c : row.cells) {
      std::string mark;
      if (!c.seen) {
        mark = "zero-shot";
      } else if (c.best_accuracy && c.best_f1) {
        mark = "best";
      } else if (c.best_accuracy) {
        mark = "best_A";
      } else if (c.best_f1) {
        mark = "best_F1";
      }
      out += "," + percent(c.accuracy) + "," + percent(c.macro_f1) + "," + mark;
    }
    out += "\n";
  }
  return out;
}

}  // namespace sequifi
