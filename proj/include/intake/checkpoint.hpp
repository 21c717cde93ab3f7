#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "intake/graph.hpp"
#include "intake/model.hpp"

namespace intake {

inline constexpr int kCheckpointFormatVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Rounds every parameter and running statistic to float32 and back, so
/// in-memory values equal what a checkpoint reload produces.
void quantize_to_float(ModelParams& params);

struct Checkpoint {
  ModelConfig config;
  std::set<BodyPart> parts;
  std::size_t root_source = kLowerLipSource;
  ModelParams params;
  std::uint64_t step = 0;   // optimizer steps taken
  std::size_t epoch = 0;    // epochs completed
  nlohmann::json run;       // run configuration that produced it
  nlohmann::json metrics;   // metrics at save time
};

/// Writes `dir/manifest.json` and `dir/params.bin` (little-endian float32:
/// parameters, running statistics, then Adam moments).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Throws std::runtime_error on a missing file, a format mismatch or a hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

SkeletonTopology checkpoint_topology(const Checkpoint& checkpoint);

}  // namespace intake
