#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sequifi {

/// The four emotion classes. Integer codes are stable and used as class indices.
enum class EmotionLabel : std::uint8_t { happy = 0, angry = 1, sad = 2, neutral = 3 };

inline constexpr int kNumClasses = 4;

inline constexpr std::array<EmotionLabel, kNumClasses> kAllLabels{
    EmotionLabel::happy, EmotionLabel::angry, EmotionLabel::sad, EmotionLabel::neutral};

constexpr int to_code(EmotionLabel label) { return static_cast<int>(label); }

std::optional<EmotionLabel> label_from_code(int code);
std::optional<EmotionLabel> parse_label(std::string_view name);
std::string_view label_name(EmotionLabel label);

using ClassOrder = std::array<EmotionLabel, kNumClasses>;

bool is_permutation(const ClassOrder& order);

}  // namespace sequifi
