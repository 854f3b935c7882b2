#pragma once

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "sequifi/corpus.hpp"
#include "sequifi/rng.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the build tree's temp area, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("sequifi_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline sequifi::Sample make_sample(const std::string& id, sequifi::EmotionLabel label, Eigen::VectorXd x,
                                   const std::string& dataset = "toy") {
  return sequifi::Sample{id, Eigen::MatrixXd(x), label, dataset};
}

// Gaussian blobs around well separated means, everything in train unless split_fraction > 0.
inline sequifi::DatasetManifest blob_manifest(const std::string& name, int dim, const std::array<int, 4>& counts,
                                              std::uint64_t seed, double spread = 0.3, double offset = 0.0) {
  sequifi::DatasetManifest m;
  m.name = name;
  m.language = "synthetic";
  m.feature_dim = dim;
  sequifi::Rng rng(seed);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      Eigen::VectorXd x(dim);
      for (int j = 0; j < dim; ++j) x[j] = offset + (j % 4 == c ? 3.0 : 0.0) + spread * rng.normal();
      m.samples.push_back(make_sample(name + "_" + std::to_string(c) + "_" + std::to_string(i),
                                      static_cast<sequifi::EmotionLabel>(c), x, name));
    }
  }
  for (const auto& s : m.samples) m.split[s.id] = sequifi::SplitSide::train;
  return m;
}

}  // namespace testing
