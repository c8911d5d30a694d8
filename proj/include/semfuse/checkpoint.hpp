#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semfuse/networks.hpp"

namespace semfuse {

// Binary parameter checkpoint, all integers and doubles little-endian:
//   "SEMFCKPT" | u32 version | u64 config digest | u32 count |
//   count x { u32 name_len | name | u32 rank | rank x u64 extent | doubles }
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::vector<CheckpointEntry> entries;
};

std::vector<unsigned char> encode_checkpoint(const nets::ParameterList& params, std::uint64_t digest);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const nets::ParameterList& params,
                     std::uint64_t digest);

// Copies stored values into `params`. Names, order, shapes and the config
// digest must all match.
void load_checkpoint(const std::filesystem::path& path, const nets::ParameterList& params,
                     std::uint64_t digest);

}  // namespace semfuse
