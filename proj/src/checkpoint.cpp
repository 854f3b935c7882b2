#include "sequifi/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace sequifi {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json architecture_to_json(const Architecture& arch) {
  ordered_json j;
  j["input_dim"] = arch.input_dim;
  j["lstm_units"] = arch.lstm_units;
  j["dense_units"] = arch.dense_units;
  j["num_classes"] = arch.num_classes;
  return j;
}

Architecture architecture_from_json(const json& j) {
  Architecture a;
  a.input_dim = j.at("input_dim").get<int>();
  a.lstm_units = j.at("lstm_units").get<std::vector<int>>();
  a.dense_units = j.at("dense_units").get<std::vector<int>>();
  a.num_classes = j.at("num_classes").get<int>();
  validate_architecture(a);
  return a;
}

ordered_json tensors_to_json(const Params& params, TensorSet set) {
  ordered_json out = ordered_json::object();
  zip_tensors(set,
              [&](const TensorInfo& info, const auto& t) {
                ordered_json entry;
                entry["rows"] = t.rows();
                entry["cols"] = t.cols();
                entry["data"] = std::vector<double>(t.data(), t.data() + t.size());
                out[info.name] = std::move(entry);
              },
              params);
  return out;
}

Params tensors_from_json(const json& j, const Params& shape_like, TensorSet set) {
  Params out = shape_like;
  zip_tensors(set,
              [&](const TensorInfo& info, auto& t) {
                if (!j.contains(info.name)) throw DataError("checkpoint: missing tensor " + info.name);
                const auto& entry = j.at(info.name);
                if (entry.at("rows").get<Eigen::Index>() != t.rows() ||
                    entry.at("cols").get<Eigen::Index>() != t.cols()) {
                  throw ShapeError("checkpoint: shape mismatch for " + info.name);
                }
                const auto data = entry.at("data").get<std::vector<double>>();
                if (static_cast<Eigen::Index>(data.size()) != t.size()) {
                  throw ShapeError("checkpoint: element count mismatch for " + info.name);
                }
                std::copy(data.begin(), data.end(), t.data());
              },
              out);
  return out;
}

Params params_with_shape(const Architecture& arch) {
  validate_architecture(arch);
  Params p;
  int in = arch.input_dim;
  for (int u : arch.lstm_units) {
    p.lstm.push_back({Mat<double>::Zero(4 * u, in), Mat<double>::Zero(4 * u, u), Vec<double>::Zero(4 * u)});
    in = u;
  }
  for (int u : arch.dense_units) {
    p.dense.push_back({Mat<double>::Zero(u, in), Vec<double>::Zero(u)});
    p.bn.push_back({Vec<double>::Zero(u), Vec<double>::Zero(u), Vec<double>::Zero(u), Vec<double>::Zero(u)});
    in = u;
  }
  p.head = {Mat<double>::Zero(arch.num_classes, in), Vec<double>::Zero(arch.num_classes)};
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params, const AdamState* adam) {
  ordered_json doc;
  doc["format"] = "sequifi-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = architecture_to_json(params.architecture());
  doc["tensors"] = tensors_to_json(params, TensorSet::all);
  if (adam) {
    ordered_json a;
    a["t"] = adam->t;
    a["m"] = tensors_to_json(adam->m, TensorSet::trainable);
    a["v"] = tensors_to_json(adam->v, TensorSet::trainable);
    doc["adam"] = std::move(a);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "sequifi-checkpoint") {
      throw DataError("checkpoint " + path.string() + ": unknown format");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    const Params shape = params_with_shape(architecture_from_json(doc.at("architecture")));
    Checkpoint cp{tensors_from_json(doc.at("tensors"), shape, TensorSet::all), std::nullopt};
    if (doc.contains("adam")) {
      const auto& a = doc.at("adam");
      AdamState st{tensors_from_json(a.at("m"), shape, TensorSet::trainable),
                   tensors_from_json(a.at("v"), shape, TensorSet::trainable), a.at("t").get<std::int64_t>()};
      cp.adam = std::move(st);
    }
    return cp;
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace sequifi
