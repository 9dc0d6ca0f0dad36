#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patternid/tensor.hpp"

namespace patternid {

using GrayImage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ImageSample {
  std::string individual_id;
  std::string image_id;
  GrayImage pixels;

  Index height() const { return pixels.rows(); }
  Index width() const { return pixels.cols(); }
};

// Binary PGM (P5, maxval 255).
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
/// Write to a sibling temporary, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Scale pixels from [0,255] to [-1,1]; output shape (1, H, W).
Tensor<float> preprocess(const GrayImage& image);

/// Stack preprocessed images into a B x 1 x H x W tensor. All images must share
/// one size.
Tensor<float> make_batch(const std::vector<GrayImage>& images);

}  // namespace patternid
