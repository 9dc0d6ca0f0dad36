#include "patternid/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "patternid/config.hpp"
#include "patternid/error.hpp"
#include "patternid/hash.hpp"
#include "patternid/image.hpp"

namespace patternid {

static_assert(std::endian::native == std::endian::little, "containers are written with native little-endian floats");

using nlohmann::json;

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + sizeof(T)) throw FormatError(std::string("truncated ") + what, bytes.size());
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Parameters<float>& params, const ModelConfig& config) {
  if (!params.congruent_with(zero_parameters<float>(config))) {
    throw ShapeError("checkpoint: parameters do not match the model config");
  }
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, value] : params.tensors) {
    const std::uint64_t length = static_cast<std::uint64_t>(value.size()) * sizeof(float);
    tensors.push_back({{"name", name}, {"shape", value.shape()}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  const json header{{"config", to_json(config)}, {"tensors", tensors}, {"parameter_count", params.scalar_count()}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : params.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), p, p + t.value.size() * static_cast<Index>(sizeof(float)));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic (expected PIDM)", 0);
  }
  const auto version = take<std::uint32_t>(bytes, 4, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto header_len = take<std::uint64_t>(bytes, 8, "checkpoint header length");
  constexpr std::size_t kHeaderStart = 16;
  if (header_len > bytes.size() - kHeaderStart) throw FormatError("checkpoint header truncated", bytes.size());

  Checkpoint ck;
  json header;
  try {
    header = json::parse(bytes.begin() + kHeaderStart, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderStart + header_len));
    ck.config = model_config_from_json(header.at("config"), "checkpoint.config");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), kHeaderStart);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what(), kHeaderStart);
  }

  ck.params = zero_parameters<float>(ck.config);
  const std::size_t blob_start = kHeaderStart + header_len;
  std::size_t expected_offset = 0;
  try {
    const auto& tensors = header.at("tensors");
    if (tensors.size() != ck.params.tensors.size()) throw FormatError("checkpoint tensor count mismatch", kHeaderStart);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& target = ck.params.tensors[i];
      const auto& entry = tensors[i];
      if (entry.at("name").get<std::string>() != target.name ||
          entry.at("shape").get<Shape>() != target.value.shape()) {
        throw FormatError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match config",
                          kHeaderStart);
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      if (offset != expected_offset || length != static_cast<std::uint64_t>(target.value.size()) * sizeof(float)) {
        throw FormatError("checkpoint tensor '" + target.name + "' has an inconsistent offset/length", kHeaderStart);
      }
      if (bytes.size() < blob_start + offset + length) {
        throw FormatError("checkpoint data truncated in '" + target.name + "'", bytes.size());
      }
      std::memcpy(target.value.data(), bytes.data() + blob_start + offset, length);
      expected_offset += length;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint tensor manifest: ") + e.what(), kHeaderStart);
  }
  if (bytes.size() != blob_start + expected_offset) {
    throw FormatError("trailing bytes after checkpoint data", blob_start + expected_offset);
  }
  return ck;
}

void save_checkpoint(const Parameters<float>& params, const ModelConfig& config, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(params, config));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

std::uint64_t checkpoint_fingerprint(const std::vector<std::uint8_t>& bytes) { return fnv1a64(bytes); }

}  // namespace patternid
