#pragma once

#include <cstdint>
#include <vector>

#include "patternid/image.hpp"

namespace patternid {

/// 8-bit grayscale PNG.
std::vector<std::uint8_t> encode_png(const GrayImage& image);
/// Any PNG libpng understands, converted to 8-bit grayscale.
GrayImage decode_png(const std::vector<std::uint8_t>& bytes);

/// PGM or PNG by signature.
GrayImage decode_image(const std::vector<std::uint8_t>& bytes);

}  // namespace patternid
