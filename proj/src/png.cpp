#include "patternid/png.hpp"

#include <png.h>

#include <cstring>

#include "patternid/error.hpp"

namespace patternid {

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.cols());
  desc.height = static_cast<png_uint_32>(image.rows());
  desc.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

GrayImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw DataError(std::string("png decode failed: ") + desc.message);
  }
  desc.format = PNG_FORMAT_GRAY;
  GrayImage image(desc.height, desc.width);
  if (!png_image_finish_read(&desc, nullptr, image.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw DataError(std::string("png decode failed: ") + desc.message);
  }
  return image;
}

GrayImage decode_image(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) return decode_png(bytes);
  try {
    return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw DataError(std::string("unreadable image: ") + e.what());
  }
}

}  // namespace patternid
