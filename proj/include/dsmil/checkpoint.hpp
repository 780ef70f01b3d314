#pragma once

// Binary checkpoint:
//   "DSMILCK1" | u32 version | u32 len + config JSON | u32 len + config hash
//   | u32 tensor count | per tensor: u32 len + name, u64 rows, u64 cols,
//   rows*cols little-endian float64
// All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "dsmil/model.hpp"
#include "dsmil/trainer.hpp"

namespace dsmil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelConfig model;
  std::string config_hash;
  ParameterSet parameters;

  DsMilModel to_model() const;
};

void write_checkpoint(const TrainConfig& config, const DsMilModel& model, std::ostream& out);
void write_checkpoint(const TrainConfig& config, const DsMilModel& model,
                      const std::filesystem::path& path);

// Throws ParseError on a malformed file and CompatibilityError when the
// version is unknown or the stored hash does not match the stored config.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dsmil
