#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"

// Test fixtures draw from std::mt19937_64 so that oracles never share the
// library's own generator.
namespace testutil {

using clipgeom::EmbeddingSet;
using clipgeom::Modality;
using clipgeom::RowMatrix;
using clipgeom::Vector;

inline RowMatrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                 double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = nd(rng) + offset;
  return m;
}

inline Vector gaussian_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(rng);
  return v;
}

inline EmbeddingSet gaussian_set(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                 Modality m = Modality::other, double offset = 0.0) {
  return EmbeddingSet(m, gaussian_matrix(rows, cols, seed, offset));
}

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("clipgeom_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
