#include "patternid/image.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "patternid/error.hpp"
#include "patternid/hash.hpp"

namespace patternid {

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t from_hex(const std::string& text) {
  if (text.empty() || text.size() > 16) throw DataError("bad hex value '" + text + "'");
  std::size_t used = 0;
  const auto value = std::stoull(text, &used, 16);
  if (used != text.size()) throw DataError("bad hex value '" + text + "'");
  return value;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header =
      "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.data(), image.data() + image.size());
  return bytes;
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw FormatError("PGM header value too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError("PGM header expects an integer", start);
    return value;
  }

  std::size_t pos_ = 0;
  const std::vector<std::uint8_t>& bytes_;
};

}  // namespace

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5)", 0);
  PgmReader reader(bytes);
  reader.pos_ = 2;
  const long width = reader.read_int();
  const long height = reader.read_int();
  const long maxval = reader.read_int();
  if (width <= 0 || height <= 0) throw FormatError("PGM has empty extent", reader.pos_);
  if (maxval != 255) throw FormatError("PGM maxval must be 255", reader.pos_);
  if (reader.pos_ >= bytes.size() || !std::isspace(bytes[reader.pos_])) {
    throw FormatError("PGM header not terminated by whitespace", reader.pos_);
  }
  ++reader.pos_;
  const std::size_t need = static_cast<std::size_t>(width * height);
  if (bytes.size() - reader.pos_ < need) throw FormatError("PGM pixel data truncated", bytes.size());
  GrayImage image(height, width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos_), need, image.data());
  return image;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

GrayImage read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor<float> preprocess(const GrayImage& image) {
  Tensor<float> out({1, image.rows(), image.cols()});
  out.flat() = Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>>(image.data(), image.size())
                   .cast<float>()
                   .array() /
                   127.5f -
               1.0f;
  return out;
}

Tensor<float> make_batch(const std::vector<GrayImage>& images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const Index h = images.front().rows();
  const Index w = images.front().cols();
  Tensor<float> batch({static_cast<Index>(images.size()), 1, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].rows() != h || images[b].cols() != w) {
      throw ShapeError("batch images differ in size: image " + std::to_string(b) + " is " +
                       std::to_string(images[b].rows()) + "x" + std::to_string(images[b].cols()));
    }
    batch.flat().segment(static_cast<Index>(b) * h * w, h * w) = preprocess(images[b]).flat();
  }
  return batch;
}

}  // namespace patternid
