#pragma once

// Checkpoint file layout (all integers little-endian):
//   "HMAP" | u32 format version | u64 header length | UTF-8 JSON header |
//   f64 tensor payloads, row-major, in manifest order.
// The header holds the model config and a manifest of {name, shape, offset}
// with offsets in bytes from the start of the payload.

#include <cstdint>
#include <filesystem>

#include "json.hpp"

#include "himap/errors.hpp"
#include "himap/model.hpp"

namespace himap::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ManifestError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Parsed header only; used to audit the manifest.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace himap::harness
