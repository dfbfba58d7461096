#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "featimit/image.hpp"
#include "featimit/scoring.hpp"
#include "featimit/tensor.hpp"

namespace testing {

inline featimit::Tensor random_tensor(std::mt19937_64& rng, int n, int c, int h, int w, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  featimit::Tensor t(n, c, h, w);
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline featimit::ScoreMap random_map(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  featimit::ScoreMap m(h, w);
  for (double& v : m.data) v = u(rng);
  return m;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("featimit_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
