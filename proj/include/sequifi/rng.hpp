#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace sequifi {

/// Mixes a root seed with a purpose tag and up to three indices into an
/// independent substream seed. Every random draw in the library is keyed
/// this way (fold, stage, epoch, purpose), never by call order across modules.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// 64-bit FNV-1a of a byte string.
std::uint64_t hash_text(std::string_view text);

/// Seeded generator with distribution code owned here, so sequences do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sequifi
