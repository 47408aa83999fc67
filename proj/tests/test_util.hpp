#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sfm/core.hpp"

namespace sfm::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline ImageBatch random_images(std::size_t n, ImageShape shape, std::mt19937_64& rng, double lo = 0.0,
                                double hi = 1.0) {
  ImageBatch b(n, shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : b.data()) v = u(rng);
  return b;
}

inline std::vector<int> balanced_labels(int n, int classes) {
  std::vector<int> y;
  for (int i = 0; i < n; ++i) y.push_back(i % classes);
  return y;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / ("sfm_test_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace sfm::testing
