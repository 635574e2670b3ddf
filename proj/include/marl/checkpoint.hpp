#pragma once

#include <string>

#include "marl/config.hpp"
#include "marl/trainer.hpp"

namespace marl {

// Binary dump of every named online parameter plus the resolved run config.
// Round-trip is bit exact. Layout (little-endian):
//   magic "MARLCKP1", u32 config_len, config json bytes,
//   u32 tensor_count, then per tensor:
//     u32 name_len, name bytes, u32 rank, u32 dims[rank], f64 data[...]
void save_checkpoint(const std::string& path, const Learner& learner,
                     const std::string& config_json);

struct LoadedCheckpoint {
    RunConfig config;
    Learner learner;
};
// Throws FileNotFound / CheckpointMismatch.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace marl
