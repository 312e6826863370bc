#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macow/config.hpp"
#include "macow/mcwt.hpp"

namespace macow {

// Layout (little-endian):
//   "MCWC" | u32 version | u8 precision | str config | u64 step
//   | u64 count, count x (str name, MCWT tensor)           parameters
//   | u64 count, count x (str name, u8 value)              flags
//   | f64 beta1 | f64 beta2 | f64 eps | u64 adam_steps | u64 skipped_steps
//   | u64 count, count x (str name, MCWT m, MCWT v)        Adam moments
//   | u32 CRC32 of every preceding byte
// where str is u64 length followed by the bytes.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  McwtArray value;
};

struct CheckpointMoment {
  std::string name;
  McwtArray first;
  McwtArray second;
};

struct OptimizerRecord {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t adam_steps = 0;
  std::uint64_t skipped_steps = 0;
  std::vector<CheckpointMoment> moments;
};

struct Checkpoint {
  Precision precision = Precision::kF32;
  std::string config;  // config_text() of the run
  std::uint64_t step = 0;
  std::vector<CheckpointTensor> parameters;
  std::vector<std::pair<std::string, bool>> flags;
  OptimizerRecord optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Verifies the trailing CRC before parsing anything.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace macow
