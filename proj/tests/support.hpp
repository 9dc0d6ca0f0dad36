#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "patternid/synthcorpus.hpp"

namespace testing_support {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "patternid") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Small rendered corpus under `root`.
inline patternid::DatasetManifest small_corpus(const std::filesystem::path& root, int individuals = 12, int views = 6,
                                               std::uint64_t seed = 3, int folds = 3, int size = 32) {
  patternid::DatasetConfig c;
  c.root = root;
  c.individuals = individuals;
  c.views = views;
  c.seed = seed;
  c.folds = folds;
  c.height = c.width = size;
  return patternid::build_dataset(c);
}

}  // namespace testing_support
