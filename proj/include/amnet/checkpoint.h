#pragma once

#include <filesystem>
#include <string>

#include "amnet/config.h"
#include "amnet/transducer.h"

namespace amnet {

// Single-file binary checkpoint, all integers little-endian:
//
//   char[8]  magic "AMNETCKP"
//   u32      format version (1)
//   u32      encoder kind (0 dense, 1 amortized)
//   u64      config length, then the config text (format_config)
//   u64      tensor count, then per tensor:
//              u32 name length, name bytes
//              u8  storage (0 float64 values, 1 packed mask bits)
//              u64 rows, u64 cols
//              float64 row-major values, or ceil(rows*cols/8) bytes of
//              mask bits, least significant bit first
//   u64      FNV-1a 64 hash of every preceding byte
//
// A text manifest (<path>.manifest) lists the same tensors for inspection.
constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                     TransducerModel& model);

struct LoadedCheckpoint {
  ExperimentConfig config;
  TransducerModel model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_manifest(const ExperimentConfig& config, TransducerModel& model);

}  // namespace amnet
