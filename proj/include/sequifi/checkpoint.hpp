#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>

#include "sequifi/trainer.hpp"

namespace sequifi {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Params params;
  std::optional<AdamState> adam;
};

nlohmann::ordered_json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

/// {name: {rows, cols, data}} over the selected tensors. Doubles are written
/// in shortest round-trip form, so a reload is bitwise exact.
nlohmann::ordered_json tensors_to_json(const Params& params, TensorSet set);
/// Fills the tensors of `shape_like` (already sized) from `j`.
Params tensors_from_json(const nlohmann::json& j, const Params& shape_like, TensorSet set);

/// Zero-initialized parameters with the shapes implied by `arch`.
Params params_with_shape(const Architecture& arch);

void save_checkpoint(const std::filesystem::path& path, const Params& params, const AdamState* adam = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sequifi
