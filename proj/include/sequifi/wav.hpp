#pragma once

#include <Eigen/Dense>

#include <filesystem>

namespace sequifi {

/// Mono audio scaled to [-1, 1).
struct WavAudio {
  int sample_rate = 0;
  Eigen::VectorXd samples;
};

/// Reads 16-bit PCM RIFF/WAVE. Stereo input is averaged to mono.
WavAudio read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM; `channels` copies of the mono signal are interleaved.
void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples,
               int sample_rate, int channels = 1);

}  // namespace sequifi
