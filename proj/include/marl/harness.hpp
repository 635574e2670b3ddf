#pragma once

#include <cstdint>
#include <string>

#include "marl/config.hpp"

namespace marl {

// Exit codes: 0 success, 1 config error, 2 runtime failure.
int cmd_train(const RunConfig& cfg, bool quiet);
int cmd_ablate(const RunConfig& cfg, bool quiet);
int cmd_inspect_attention(const std::string& checkpoint_path, uint64_t env_seed, long steps,
                          const std::string& out_dir, bool quiet);

}  // namespace marl
