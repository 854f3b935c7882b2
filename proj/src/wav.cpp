#include "sequifi/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sequifi/errors.hpp"

namespace sequifi {

namespace {

std::uint32_t read_u32(const std::vector<unsigned char>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(const std::vector<unsigned char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff),
                                  static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  const std::array<char, 2> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes.data(), 2);
}

}  // namespace

WavAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    return DataError("malformed WAV " + path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") {
    throw fail("missing RIFF/WAVE header");
  }

  int channels = 0;
  int sample_rate = 0;
  bool have_fmt = false;
  std::size_t data_at = 0;
  std::size_t data_len = 0;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + pos, bytes.begin() + pos + 4);
    const std::size_t len = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      if (id != "data") throw fail("truncated chunk '" + id + "'");
    }
    if (id == "fmt ") {
      if (len < 16) throw fail("short fmt chunk");
      const auto format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      sample_rate = static_cast<int>(read_u32(bytes, body + 4));
      const auto bits = read_u16(bytes, body + 14);
      if (format != 1) throw fail("only PCM (format 1) is supported");
      if (bits != 16) throw fail("only 16-bit samples are supported");
      if (channels != 1 && channels != 2) throw fail("only mono or stereo is supported");
      if (sample_rate <= 0) throw fail("invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      data_at = body;
      data_len = std::min(len, bytes.size() - body);
      have_data = true;
    }
    pos = body + len + (len & 1U);
  }
  if (!have_fmt) throw fail("no fmt chunk");
  if (!have_data) throw fail("no data chunk");

  const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
  const std::size_t frames = data_len / frame_bytes;
  WavAudio audio;
  audio.sample_rate = sample_rate;
  audio.samples.resize(static_cast<Eigen::Index>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < channels; ++ch) {
      const auto raw = static_cast<std::int16_t>(read_u16(bytes, data_at + i * frame_bytes + 2 * ch));
      acc += raw / 32768.0;
    }
    audio.samples[static_cast<Eigen::Index>(i)] = acc / channels;
  }
  return audio;
}

void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples, int sample_rate,
               int channels) {
  if (channels != 1 && channels != 2) throw DataError("write_wav: channels must be 1 or 2");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write WAV file " + path.string());
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2 * channels);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_len);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2 * channels));
  put_u16(out, static_cast<std::uint16_t>(2 * channels));
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_len);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double clipped = std::clamp(samples[i], -1.0, 32767.0 / 32768.0);
    const auto v = static_cast<std::int16_t>(std::lround(clipped * 32768.0));
    for (int ch = 0; ch < channels; ++ch) put_u16(out, static_cast<std::uint16_t>(v));
  }
}

}  // namespace sequifi
