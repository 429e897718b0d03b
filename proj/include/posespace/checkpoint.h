#pragma once

#include "posespace/denoiser.h"
#include "posespace/json_io.h"

#include <filesystem>
#include <string>

namespace posespace {

// Layout: 8-byte magic "PSCKPT01", little-endian uint64 header length, the
// JSON header (config, stats, tensor names/shapes/byte offsets, free-form
// metadata), then the tensors as little-endian float64 in row-major order.
struct Checkpoint {
  DenoiserModel model;
  Json meta = Json::object();
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Json config_to_json(const DenoiserConfig& cfg);
DenoiserConfig config_from_json(const Json& doc);

}  // namespace posespace
