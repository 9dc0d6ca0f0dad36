#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "patternid/embednet.hpp"

namespace patternid {

// Container: "PIDM", u32 LE version, u64 LE header length, JSON header
// (config + ordered tensor manifest), then the raw little-endian float32 blobs.
inline constexpr char kCheckpointMagic[4] = {'P', 'I', 'D', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
};

std::vector<std::uint8_t> serialize_checkpoint(const Parameters<float>& params, const ModelConfig& config);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Parameters<float>& params, const ModelConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model fingerprint: FNV-1a 64 of the checkpoint bytes.
std::uint64_t checkpoint_fingerprint(const std::vector<std::uint8_t>& bytes);

}  // namespace patternid
