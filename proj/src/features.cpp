#include "sequifi/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <set>
#include <string>

#include "sequifi/detail/text.hpp"
#include "sequifi/errors.hpp"

namespace sequifi {

int MfccConfig::frame_samples() const {
  return static_cast<int>(std::lround(sample_rate * frame_len_ms / 1000.0));
}

int MfccConfig::hop_samples() const {
  return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

void validate_mfcc_config(const MfccConfig& cfg) {
  if (cfg.sample_rate <= 0) throw ConfigError("mfcc: sample_rate must be positive");
  if (cfg.frame_samples() <= 0 || cfg.hop_samples() <= 0) {
    throw ConfigError("mfcc: frame and hop must span at least one sample");
  }
  if (cfg.fft_size < cfg.frame_samples()) throw ConfigError("mfcc: fft_size must be >= frame samples");
  if (cfg.num_mel_filters <= 0) throw ConfigError("mfcc: num_mel_filters must be positive");
  if (cfg.num_ceps <= 0 || cfg.num_ceps > cfg.num_mel_filters) {
    throw ConfigError("mfcc: num_ceps must be in [1, num_mel_filters]");
  }
  if (cfg.fmin < 0.0 || cfg.fmin >= cfg.fmax) throw ConfigError("mfcc: need 0 <= fmin < fmax");
  if (cfg.fmax > cfg.sample_rate / 2.0) throw ConfigError("mfcc: fmax must be <= sample_rate / 2");
  if (!(cfg.log_floor > 0.0)) throw ConfigError("mfcc: log_floor must be positive");
}

Eigen::VectorXd resample_to_16k(const Eigen::VectorXd& signal, int src_rate) {
  if (signal.size() == 0) throw DataError("resample: empty signal");
  if (src_rate < 8000) throw DataError("resample: source rate must be >= 8000 Hz");
  if (src_rate == kTargetSampleRate) return signal;

  constexpr int kHalfTaps = 32;
  constexpr double kBeta = 8.0;
  const double ratio = static_cast<double>(src_rate) / kTargetSampleRate;
  // Cutoff in cycles per input sample.
  const double cutoff = std::min(src_rate, kTargetSampleRate) / 2.0 / src_rate;
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);

  const auto out_len = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(signal.size()) * kTargetSampleRate / src_rate));
  Eigen::VectorXd out(out_len);
  for (Eigen::Index n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) * ratio;
    const auto center = static_cast<Eigen::Index>(std::floor(t));
    double acc = 0.0;
    for (Eigen::Index k = center - kHalfTaps + 1; k <= center + kHalfTaps; ++k) {
      if (k < 0 || k >= signal.size()) continue;
      const double x = t - static_cast<double>(k);
      const double r = x / kHalfTaps;
      if (std::abs(r) >= 1.0) continue;
      const double arg = 2.0 * cutoff * x;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double window = std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      acc += signal[k] * 2.0 * cutoff * sinc * window;
    }
    out[n] = acc;
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::VectorXd mel_filter_edges(const MfccConfig& cfg) {
  const int n = cfg.num_mel_filters + 2;
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  Eigen::VectorXd edges(n);
  for (int i = 0; i < n; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (n - 1));
  edges[0] = cfg.fmin;
  edges[n - 1] = cfg.fmax;
  return edges;
}

Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg) {
  validate_mfcc_config(cfg);
  const Eigen::VectorXd edges = mel_filter_edges(cfg);
  const int bins = cfg.fft_size / 2 + 1;
  Eigen::MatrixXd bank = Eigen::MatrixXd::Zero(cfg.num_mel_filters, bins);
  for (int m = 0; m < cfg.num_mel_filters; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      if (f > left && f < center) {
        bank(m, k) = (f - left) / (center - left);
      } else if (f == center) {
        bank(m, k) = 1.0;
      } else if (f > center && f < right) {
        bank(m, k) = (right - f) / (right - center);
      }
    }
  }
  return bank;
}

Eigen::MatrixXd dct2_matrix(int num_ceps, int num_inputs) {
  Eigen::MatrixXd basis(num_ceps, num_inputs);
  for (int k = 0; k < num_ceps; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / num_inputs) : std::sqrt(2.0 / num_inputs);
    for (int n = 0; n < num_inputs; ++n) {
      basis(k, n) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * num_inputs));
    }
  }
  return basis;
}

Eigen::MatrixXd log_mel_energies(const Eigen::VectorXd& signal, const MfccConfig& cfg) {
  validate_mfcc_config(cfg);
  const int frame = cfg.frame_samples();
  const int hop = cfg.hop_samples();
  if (signal.size() < frame) {
    throw DataError("mfcc: signal shorter than one frame (" + std::to_string(signal.size()) + " < " +
                    std::to_string(frame) + " samples)");
  }
  const Eigen::Index frames = 1 + (signal.size() - frame) / hop;

  Eigen::VectorXd emphasized(signal.size());
  emphasized[0] = signal[0];
  for (Eigen::Index i = 1; i < signal.size(); ++i) {
    emphasized[i] = signal[i] - cfg.preemphasis * signal[i - 1];
  }

  Eigen::VectorXd window(frame);
  for (int n = 0; n < frame; ++n) {
    window[n] = frame == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (frame - 1));
  }

  const Eigen::MatrixXd bank = mel_filterbank(cfg);
  const int bins = cfg.fft_size / 2 + 1;
  Eigen::FFT<double> fft;
  std::vector<double> buffer(static_cast<std::size_t>(cfg.fft_size), 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(bins);
  Eigen::MatrixXd energies(frames, cfg.num_mel_filters);

  for (Eigen::Index f = 0; f < frames; ++f) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    for (int n = 0; n < frame; ++n) buffer[n] = emphasized[f * hop + n] * window[n];
    fft.fwd(spectrum, buffer);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]) / cfg.fft_size;
    const Eigen::VectorXd mel = (bank * power).cwiseMax(cfg.log_floor);
    energies.row(f) = mel.array().log().matrix().transpose();
  }
  return energies;
}

Eigen::MatrixXd compute_mfcc(const Eigen::VectorXd& signal, const MfccConfig& cfg) {
  const Eigen::MatrixXd log_mel = log_mel_energies(signal, cfg);
  const Eigen::MatrixXd dct = dct2_matrix(cfg.num_ceps, cfg.num_mel_filters);
  return log_mel * dct.transpose();
}

FeatureVector average_pool(const Eigen::MatrixXd& frames, Provenance provenance) {
  if (frames.rows() == 0) throw DataError("average_pool: no frames");
  return {frames.colwise().mean().transpose(), provenance};
}

std::map<std::string, Eigen::MatrixXd> read_features_csv(const std::filesystem::path& path,
                                                         int expected_dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open features CSV " + path.string());
  const std::string where = path.filename().string();
  std::string line;
  if (!std::getline(in, line)) throw DataError(where + ": empty features CSV");
  const auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "id") throw DataError(where + ":1: header must start with 'id'");
  const bool sequence = header.size() > 1 && header[1] == "frame";
  const std::size_t first = sequence ? 2 : 1;
  const auto declared = static_cast<int>(header.size() - first);
  if (declared != expected_dim) {
    throw DataError(where + ":1: header declares " + std::to_string(declared) +
                    " feature columns, expected " + std::to_string(expected_dim));
  }

  std::map<std::string, std::vector<Eigen::VectorXd>> rows;
  std::set<std::string> finished;
  std::string current;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    const std::string id(cells[0]);
    const std::string at = where + ":" + std::to_string(line_no) + " (id '" + id + "')";
    const auto values = static_cast<int>(cells.size()) - static_cast<int>(first);
    if (values != expected_dim) {
      throw DataError(at + ": dimension mismatch, row has " + std::to_string(values) +
                      " values, expected " + std::to_string(expected_dim));
    }
    if (sequence) {
      if (id != current) {
        if (!current.empty()) finished.insert(current);
        if (finished.contains(id)) throw DataError(at + ": duplicate id");
        current = id;
      }
      const auto frame = detail::parse_double(cells[1]);
      if (!frame || *frame != static_cast<double>(rows[id].size())) {
        throw DataError(at + ": frame index out of sequence");
      }
    } else if (rows.contains(id)) {
      throw DataError(at + ": duplicate id");
    }
    Eigen::VectorXd vec(expected_dim);
    for (int j = 0; j < expected_dim; ++j) {
      const auto v = detail::parse_double(cells[first + j]);
      if (!v) throw DataError(at + ": non-numeric cell in column f" + std::to_string(j));
      if (!std::isfinite(*v)) throw DataError(at + ": non-finite value in column f" + std::to_string(j));
      vec[j] = *v;
    }
    rows[id].push_back(std::move(vec));
  }

  std::map<std::string, Eigen::MatrixXd> result;
  for (auto& [id, frames] : rows) {
    Eigen::MatrixXd m(expected_dim, static_cast<Eigen::Index>(frames.size()));
    for (std::size_t t = 0; t < frames.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = frames[t];
    result.emplace(id, std::move(m));
  }
  return result;
}

std::map<std::string, FeatureVector> ingest_embeddings(const std::filesystem::path& path,
                                                       int expected_dim) {
  std::map<std::string, FeatureVector> out;
  for (auto& [id, frames] : read_features_csv(path, expected_dim)) {
    out.emplace(id, average_pool(frames.transpose(), Provenance::precomputed));
  }
  return out;
}

void write_features_csv(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, Eigen::MatrixXd>>& entries,
                        bool sequence) {
  if (entries.empty()) throw DataError("write_features_csv: no entries");
  const auto dim = entries.front().second.rows();
  std::string text = sequence ? "id,frame" : "id";
  for (Eigen::Index j = 0; j < dim; ++j) text += ",f" + std::to_string(j);
  text += '\n';
  for (const auto& [id, frames] : entries) {
    if (frames.rows() != dim) throw ShapeError("write_features_csv: inconsistent dim for " + id);
    if (!sequence && frames.cols() != 1) {
      throw ShapeError("write_features_csv: pooled output needs one column for " + id);
    }
    for (Eigen::Index t = 0; t < frames.cols(); ++t) {
      text += id;
      if (sequence) text += "," + std::to_string(t);
      for (Eigen::Index j = 0; j < dim; ++j) text += "," + detail::format_double(frames(j, t));
      text += '\n';
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write features CSV " + path.string());
  out << text;
  if (!out) throw DataError("failed writing features CSV " + path.string());
}

}  // namespace sequifi
