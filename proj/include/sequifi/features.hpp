#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace sequifi {

struct MfccConfig {
  int sample_rate = 16000;
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  int fft_size = 512;
  int num_mel_filters = 26;
  int num_ceps = 13;
  double fmin = 0.0;
  double fmax = 8000.0;
  /// Mel energies are floored here before the log.
  double log_floor = 1e-10;
  double preemphasis = 0.97;
  /// Keep the per-frame sequence instead of average pooling it.
  bool sequence_mode = false;

  int frame_samples() const;
  int hop_samples() const;
};

void validate_mfcc_config(const MfccConfig& cfg);

enum class Provenance { mfcc, precomputed };

struct FeatureVector {
  Eigen::VectorXd values;
  Provenance provenance = Provenance::precomputed;
};

inline constexpr int kTargetSampleRate = 16000;

/// Windowed-sinc (Kaiser, beta 8, 64 taps) resampler to 16 kHz with the
/// anti-alias cutoff at min(src_rate, 16000) / 2.
Eigen::VectorXd resample_to_16k(const Eigen::VectorXd& signal, int src_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// The num_mel_filters + 2 triangle corner frequencies in Hz, equally spaced on
/// the mel scale. Filter m (0-based) rises over [edges[m], edges[m+1]] and falls
/// over [edges[m+1], edges[m+2]].
Eigen::VectorXd mel_filter_edges(const MfccConfig& cfg);

/// num_mel_filters x (fft_size/2 + 1) triangular weights.
Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg);

/// Orthonormal DCT-II basis truncated to the first `num_ceps` rows.
Eigen::MatrixXd dct2_matrix(int num_ceps, int num_inputs);

/// frames x num_mel_filters log mel energies.
Eigen::MatrixXd log_mel_energies(const Eigen::VectorXd& signal, const MfccConfig& cfg);

/// frames x num_ceps cepstra; frames = 1 + floor((len - frame) / hop).
Eigen::MatrixXd compute_mfcc(const Eigen::VectorXd& signal, const MfccConfig& cfg);

/// Column means of a T x d frame matrix.
FeatureVector average_pool(const Eigen::MatrixXd& frames,
                           Provenance provenance = Provenance::precomputed);

/// Reads a features CSV. Pooled files have header `id,f0,...,f{d-1}`; sequence
/// files have header `id,frame,f0,...` with one row per frame. Returns each
/// sample's frames as a d x T matrix, keyed by id.
std::map<std::string, Eigen::MatrixXd> read_features_csv(const std::filesystem::path& path,
                                                         int expected_dim);

/// Pooled-only view of a features CSV.
std::map<std::string, FeatureVector> ingest_embeddings(const std::filesystem::path& path,
                                                       int expected_dim);

/// Writes entries (id, d x T frames) in the given order. T must be 1 for every
/// entry unless `sequence` is set.
void write_features_csv(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, Eigen::MatrixXd>>& entries,
                        bool sequence);

}  // namespace sequifi
