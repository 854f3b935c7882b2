#include "sequifi/labels.hpp"

#include <algorithm>

namespace sequifi {

namespace {
constexpr std::array<std::string_view, kNumClasses> kNames{"happy", "angry", "sad", "neutral"};
}

std::optional<EmotionLabel> label_from_code(int code) {
  if (code < 0 || code >= kNumClasses) return std::nullopt;
  return static_cast<EmotionLabel>(code);
}

std::optional<EmotionLabel> parse_label(std::string_view name) {
  for (int c = 0; c < kNumClasses; ++c) {
    if (kNames[c] == name) return static_cast<EmotionLabel>(c);
  }
  return std::nullopt;
}

std::string_view label_name(EmotionLabel label) { return kNames[to_code(label)]; }

bool is_permutation(const ClassOrder& order) {
  std::array<bool, kNumClasses> seen{};
  for (auto label : order) {
    const int c = to_code(label);
    if (c < 0 || c >= kNumClasses || seen[c]) return false;
    seen[c] = true;
  }
  return true;
}

}  // namespace sequifi
