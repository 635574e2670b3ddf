#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marl/agent.hpp"
#include "marl/env.hpp"
#include "marl/mixer.hpp"

namespace marl {

enum class AblationMode { S2RL, DenseOnly, SparseOnly };
enum class OptimizerKind { RmsProp, Adam };

std::string to_string(MixerKind k);
std::string to_string(AblationMode m);
std::string to_string(OptimizerKind o);

struct RunConfig {
    env::EnvConfig env;
    MixerKind mixer = MixerKind::Monotonic;
    AblationMode ablation = AblationMode::S2RL;
    OptimizerKind optimizer = OptimizerKind::RmsProp;
    double lambda = 1.0;
    double gamma = 0.99;
    double lr = 5e-4;
    double smoothing = 0.99;
    EpsilonSchedule epsilon;
    int batch_episodes = 32;
    int buffer_capacity = 5000;
    int target_sync_episodes = 200;
    long total_env_steps = 200000;
    int eval_interval_episodes = 100;
    int eval_episodes = 32;
    std::vector<uint64_t> seeds{0, 1, 2};
    bool separate_aux_mixer = false;
    std::string out_dir = "runs";
};

// Strict flat-JSON parse; throws FileNotFound / ParseError / ValidationError.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& json_text);

// Every key present, defaults materialized; stable key order.
std::string resolved_config_json(const RunConfig& cfg);

}  // namespace marl
