#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "retro/core.hpp"

namespace retro::testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("retro_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim, float scale = 1.0f) {
  std::normal_distribution<float> normal(0.0f, scale);
  std::vector<float> v(dim);
  for (float& x : v) x = normal(rng);
  return v;
}

// Labelled feature examples with ids 0..n-1 and labels i % classes.
inline std::vector<Example> random_feature_corpus(std::size_t n, std::size_t dim, std::size_t classes,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = i;
    ex.input = Embedding(random_vector(rng, dim));
    ex.label = static_cast<ClassId>(i % classes);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace retro::testing
