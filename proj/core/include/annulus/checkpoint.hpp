#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "annulus/model.hpp"

namespace annulus {

/// Trained model state. Optimizer moments are optional (empty when absent)
/// and allow training to resume exactly.
struct Checkpoint {
  ModelConfig config;
  ParameterSet<float> params;
  std::uint64_t step = 0;
  /// Textual state of the trainer's mt19937_64 stream.
  std::string rng_state;
  ParameterSet<float> adam_m;
  ParameterSet<float> adam_v;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "ALCK", u32 version, u32 header length, JSON header (config, step, rng
/// state, tensor table of name/shape/offset), then raw little-endian f32 data.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws FormatError on a bad magic, version, header or truncated data.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, and throws ConfigError if the stored config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace annulus
