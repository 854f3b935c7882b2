#include "sequifi/corpus.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sequifi/errors.hpp"
#include "sequifi/features.hpp"
#include "sequifi/rng.hpp"

namespace sequifi {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

/// 1-based line of the first occurrence of `"id"` value `id` in the manifest text.
std::size_t line_of_id(const std::string& text, const std::string& id) {
  const std::string needle = "\"" + id + "\"";
  const auto samples_at = text.find("\"samples\"");
  const auto at = text.find(needle, samples_at == std::string::npos ? 0 : samples_at);
  if (at == std::string::npos) return 0;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(at), '\n'));
}

std::string side_name(SplitSide side) { return side == SplitSide::train ? "train" : "test"; }

}  // namespace

const Eigen::MatrixXd& Sample::frames() const {
  if (const auto* m = std::get_if<Eigen::MatrixXd>(&source)) return *m;
  throw DataError("sample '" + id + "' has no extracted features (WAV reference only)");
}

bool DatasetManifest::materialized() const {
  return std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.has_features(); });
}

void validate_manifest(const DatasetManifest& m) {
  if (m.feature_dim <= 0) throw DataError(m.name + ": feature_dim must be positive");
  std::set<std::string> ids;
  std::array<std::array<int, kNumClasses>, 2> per_side{};
  std::array<int, kNumClasses> present{};
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const Sample& s = m.samples[i];
    const std::string at = m.name + ": samples[" + std::to_string(i) + "] (id '" + s.id + "')";
    if (s.id.empty()) throw DataError(at + ": empty id");
    if (!ids.insert(s.id).second) throw DataError(at + ": duplicate id");
    if (s.has_features()) {
      const auto& f = s.frames();
      if (f.rows() != m.feature_dim) {
        throw DataError(at + ": dimension mismatch, has " + std::to_string(f.rows()) +
                        " values, expected " + std::to_string(m.feature_dim));
      }
      if (f.cols() < 1) throw DataError(at + ": empty feature sequence");
      if (!f.allFinite()) throw DataError(at + ": non-finite feature value");
    }
    const auto it = m.split.find(s.id);
    if (it == m.split.end()) throw DataError(at + ": missing from split");
    ++per_side[it->second == SplitSide::train ? 0 : 1][to_code(s.label)];
    ++present[to_code(s.label)];
  }
  for (const auto& [id, side] : m.split) {
    if (!ids.contains(id)) throw DataError(m.name + ": split names unknown id '" + id + "'");
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (present[c] == 0) continue;
    for (int s = 0; s < 2; ++s) {
      if (per_side[s][c] == 0) {
        throw DataError(m.name + ": " + side_name(s == 0 ? SplitSide::train : SplitSide::test) +
                        " split has no '" + std::string(label_name(static_cast<EmotionLabel>(c))) +
                        "' samples");
      }
    }
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const std::string where = path.filename().string();

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(where + ": parse failure: " + e.what());
  }

  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.name = doc.at("name").get<std::string>();
    m.language = doc.value("language", std::string{});
    m.feature_dim = doc.at("feature_dim").get<int>();
    if (doc.contains("features_csv")) m.features_csv = doc.at("features_csv").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (m.feature_dim <= 0) throw DataError(where + ": feature_dim must be positive");

  std::map<std::string, Eigen::MatrixXd> csv_rows;
  if (m.features_csv) {
    const auto csv_path = m.features_csv->is_absolute() ? *m.features_csv : m.base_dir / *m.features_csv;
    csv_rows = read_features_csv(csv_path, m.feature_dim);
  }

  if (!doc.contains("samples") || !doc.at("samples").is_array()) {
    throw DataError(where + ": 'samples' array is required");
  }
  std::set<std::string> ids;
  const auto& samples = doc.at("samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& js = samples[i];
    Sample s;
    std::string at = where + ": samples[" + std::to_string(i) + "]";
    try {
      s.id = js.at("id").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(at + ": " + e.what());
    }
    at = where + ":" + std::to_string(line_of_id(text, s.id)) + ": sample '" + s.id + "'";
    if (!ids.insert(s.id).second) throw DataError(at + ": duplicate id");
    const std::string label_text = js.value("label", std::string{});
    const auto label = parse_label(label_text);
    if (!label) {
      throw DataError(at + ": unknown label '" + label_text +
                      "' (expected happy, angry, sad or neutral)");
    }
    s.label = *label;
    s.dataset_id = m.name;

    if (auto it = csv_rows.find(s.id); it != csv_rows.end()) {
      s.source = std::move(it->second);
      csv_rows.erase(it);
    } else if (js.contains("features")) {
      const auto& jf = js.at("features");
      if (!jf.is_array() || jf.empty()) throw DataError(at + ": 'features' must be a non-empty array");
      const bool framed = jf.front().is_array();
      const auto cols = framed ? static_cast<Eigen::Index>(jf.size()) : 1;
      Eigen::MatrixXd frames(m.feature_dim, cols);
      for (Eigen::Index t = 0; t < cols; ++t) {
        const auto& vec = framed ? jf[static_cast<std::size_t>(t)] : jf;
        if (!vec.is_array() || static_cast<int>(vec.size()) != m.feature_dim) {
          throw DataError(at + ": dimension mismatch, has " + std::to_string(vec.size()) +
                          " values, expected " + std::to_string(m.feature_dim));
        }
        for (int j = 0; j < m.feature_dim; ++j) {
          const auto& cell = vec[static_cast<std::size_t>(j)];
          if (!cell.is_number()) throw DataError(at + ": non-numeric feature value");
          frames(j, t) = cell.get<double>();
        }
      }
      s.source = std::move(frames);
    } else if (js.contains("wav")) {
      std::filesystem::path wav = js.at("wav").get<std::string>();
      s.source = WavRef{wav.is_absolute() ? wav : m.base_dir / wav};
    } else {
      throw DataError(at + ": no features (features_csv row, inline 'features' or 'wav')");
    }
    m.samples.push_back(std::move(s));
  }
  if (!csv_rows.empty()) {
    throw DataError(where + ": features CSV has a row for unknown id '" + csv_rows.begin()->first + "'");
  }

  if (doc.contains("split")) {
    for (const auto& [id, side] : doc.at("split").items()) {
      const std::string value = side.is_string() ? side.get<std::string>() : std::string{};
      if (value == "train") {
        m.split[id] = SplitSide::train;
      } else if (value == "test") {
        m.split[id] = SplitSide::test;
      } else {
        throw DataError(where + ":" + std::to_string(line_of_id(text, id)) + ": split for '" + id +
                        "' must be \"train\" or \"test\"");
      }
    }
  } else {
    m.split = stratified_split(m.samples, kDefaultTestFraction, derive_seed(0, "manifest-split:" + m.name));
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  ordered_json doc;
  doc["name"] = m.name;
  doc["language"] = m.language;
  doc["feature_dim"] = m.feature_dim;
  if (m.features_csv) doc["features_csv"] = m.features_csv->generic_string();
  ordered_json samples = ordered_json::array();
  for (const auto& s : m.samples) {
    ordered_json js;
    js["id"] = s.id;
    js["label"] = std::string(label_name(s.label));
    if (const auto* wav = std::get_if<WavRef>(&s.source)) {
      const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
      const auto rel = std::filesystem::absolute(wav->path).lexically_relative(std::filesystem::absolute(dir));
      js["wav"] = (rel.empty() ? wav->path : rel).generic_string();
    } else if (!m.features_csv) {
      const auto& f = s.frames();
      if (f.cols() == 1) {
        js["features"] = std::vector<double>(f.data(), f.data() + f.rows());
      } else {
        ordered_json frames = ordered_json::array();
        for (Eigen::Index t = 0; t < f.cols(); ++t) {
          frames.push_back(std::vector<double>(f.col(t).data(), f.col(t).data() + f.rows()));
        }
        js["features"] = std::move(frames);
      }
    }
    samples.push_back(std::move(js));
  }
  doc["samples"] = std::move(samples);
  ordered_json split = ordered_json::object();
  for (const auto& s : m.samples) {
    if (auto it = m.split.find(s.id); it != m.split.end()) split[s.id] = side_name(it->second);
  }
  doc["split"] = std::move(split);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest " + path.string());
}

SplitMap stratified_split(std::span<const Sample> samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DataError("stratified_split: test_fraction must be in (0, 1)");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[to_code(samples[i].label)].push_back(i);

  SplitMap split;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw DataError("stratified_split: class '" + std::string(label_name(static_cast<EmotionLabel>(c))) +
                      "' has fewer than 2 samples");
    }
    const auto n = static_cast<long>(idx.size());
    const long wanted = std::max(1L, std::lround(test_fraction * static_cast<double>(n)));
    const long test_count = std::min(wanted, n - 1);
    Rng rng(derive_seed(seed, "stratified-split", static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::size_t>(idx));
    for (long k = 0; k < n; ++k) {
      split[samples[idx[static_cast<std::size_t>(k)]].id] = k < test_count ? SplitSide::test : SplitSide::train;
    }
  }
  return split;
}

std::vector<Sample> class_subset(const DatasetManifest& m, EmotionLabel label, SplitSide side) {
  std::vector<Sample> out;
  for (const auto& s : m.samples) {
    if (s.label != label) continue;
    const auto it = m.split.find(s.id);
    if (it != m.split.end() && it->second == side) out.push_back(s);
  }
  return out;
}

std::vector<Sample> split_side(const DatasetManifest& m, SplitSide side) {
  std::vector<Sample> out;
  for (const auto& s : m.samples) {
    const auto it = m.split.find(s.id);
    if (it != m.split.end() && it->second == side) out.push_back(s);
  }
  return out;
}

void validate_synth_spec(const SynthSpec& spec) {
  if (spec.num_datasets <= 0) throw ConfigError("synth: num_datasets must be positive");
  if (spec.feature_dim < kNumClasses) {
    throw ConfigError("synth: feature_dim must be at least 4 (one orthogonal direction per class)");
  }
  if (spec.samples_per_class < 2) throw ConfigError("synth: samples_per_class must be at least 2");
  if (!(spec.class_separation >= 0.0) || !std::isfinite(spec.class_separation)) {
    throw ConfigError("synth: class_separation must be finite and nonnegative");
  }
  if (!(spec.domain_shift >= 0.0) || !std::isfinite(spec.domain_shift)) {
    throw ConfigError("synth: domain_shift must be finite and nonnegative");
  }
  if (!(spec.noise_std > 0.0) || !std::isfinite(spec.noise_std)) {
    throw ConfigError("synth: noise_std must be positive");
  }
}

namespace {

struct SynthGeometry {
  Eigen::MatrixXd class_dirs;  // dim x 4, orthonormal columns
  Eigen::VectorXd shift_dir;   // unit
};

SynthGeometry synth_geometry(const SynthSpec& spec) {
  Rng rng(derive_seed(spec.seed, "synth-geometry"));
  Eigen::MatrixXd gauss(spec.feature_dim, kNumClasses);
  for (Eigen::Index j = 0; j < gauss.cols(); ++j) {
    for (Eigen::Index i = 0; i < gauss.rows(); ++i) gauss(i, j) = rng.normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  SynthGeometry g;
  g.class_dirs = qr.householderQ() * Eigen::MatrixXd::Identity(spec.feature_dim, kNumClasses);
  g.shift_dir.resize(spec.feature_dim);
  for (Eigen::Index i = 0; i < g.shift_dir.size(); ++i) g.shift_dir[i] = rng.normal();
  g.shift_dir.normalize();
  return g;
}

Eigen::VectorXd class_mean(const SynthSpec& spec, const SynthGeometry& g, int t, int c) {
  // Orthonormal directions scaled by sep/sqrt(2) put every pair of means
  // exactly class_separation apart.
  return spec.class_separation / std::sqrt(2.0) * g.class_dirs.col(c) +
         static_cast<double>(t) * spec.domain_shift * g.shift_dir;
}

}  // namespace

Eigen::VectorXd synth_class_mean(const SynthSpec& spec, int dataset_index, EmotionLabel label) {
  validate_synth_spec(spec);
  return class_mean(spec, synth_geometry(spec), dataset_index, to_code(label));
}

std::vector<DatasetManifest> gen_synth(const SynthSpec& spec) {
  validate_synth_spec(spec);
  const SynthGeometry g = synth_geometry(spec);
  std::vector<DatasetManifest> out;
  for (int t = 0; t < spec.num_datasets; ++t) {
    DatasetManifest m;
    m.name = "synth_" + std::to_string(t);
    m.language = "synthetic";
    m.feature_dim = spec.feature_dim;
    Rng rng(derive_seed(spec.seed, "synth-samples", static_cast<std::uint64_t>(t)));
    for (int c = 0; c < kNumClasses; ++c) {
      const Eigen::VectorXd mean = class_mean(spec, g, t, c);
      for (int i = 0; i < spec.samples_per_class; ++i) {
        Eigen::MatrixXd x(spec.feature_dim, 1);
        for (int j = 0; j < spec.feature_dim; ++j) x(j, 0) = mean[j] + spec.noise_std * rng.normal();
        char id[64];
        std::snprintf(id, sizeof(id), "s%d_%s_%04d", t, label_name(static_cast<EmotionLabel>(c)).data(), i);
        m.samples.push_back(Sample{id, std::move(x), static_cast<EmotionLabel>(c), m.name});
      }
    }
    m.split = stratified_split(m.samples, kDefaultTestFraction,
                               derive_seed(spec.seed, "synth-split", static_cast<std::uint64_t>(t)));
    validate_manifest(m);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace sequifi
