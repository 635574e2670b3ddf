#pragma once

#include <random>
#include <vector>

#include "marl/attention.hpp"
#include "marl/tensor.hpp"

namespace marl::env {

enum class Team { Ally, Enemy, Distractor };

struct Unit {
    Team team = Team::Ally;
    double x = 0.0, y = 0.0;
    double health = 0.0, max_health = 0.0;
    bool alive = false;
};

// Unit order: allies, then enemies, then distractors.
struct WorldState {
    std::vector<Unit> units;
    int t = 0;
    bool terminal = false;
    bool win = false;
};

struct EnvConfig {
    int allies = 3;
    int enemies = 3;
    int distractors = 6;
    double arena = 16.0;
    double sight = 9.0;
    double ally_range = 3.0;
    double ally_damage = 4.0;
    double enemy_range = 2.0;
    double enemy_damage = 3.0;
    double unit_health = 20.0;
    double move_step = 1.0;
    int episode_limit = 60;
    double reward_damage = 0.05;
    double reward_kill = 0.5;
    double reward_win = 2.0;
};

// Discrete action ids; attacks follow the fixed prefix.
inline constexpr int kNoop = 0;
inline constexpr int kStop = 1;
inline constexpr int kMoveN = 2;
inline constexpr int kMoveS = 3;
inline constexpr int kMoveE = 4;
inline constexpr int kMoveW = 5;
inline constexpr int kFirstAttack = 6;

inline int n_actions(const EnvConfig& c) { return c.enemies + 6; }
inline int n_entities(const EnvConfig& c) { return c.allies + c.enemies + c.distractors; }
// [visible, rel_x, rel_y, dist, health_frac, team(3)] + observer one-hot
inline int entity_feat(const EnvConfig& c) { return 8 + c.allies; }
// Per unit: [x, y, health_frac, team(3)].
inline int state_dim(const EnvConfig& c) { return 6 * n_entities(c); }

WorldState reset(const EnvConfig& c, std::mt19937_64& rng);

EntitySet observe(const WorldState& s, int agent, const EnvConfig& c);

std::vector<uint8_t> avail_actions(const WorldState& s, int agent, const EnvConfig& c);

struct StepInfo {
    double reward = 0.0;
    bool terminal = false;
    bool win = false;
    double damage_dealt = 0.0;
    int enemy_deaths = 0;
};
// Simultaneous resolution: moves, then attacks, then deaths. Throws
// UnavailableAction for masked actions and EpisodeFinished on a terminal state.
StepInfo step(WorldState& s, const std::vector<int>& joint_action, const EnvConfig& c);

Tensor global_state(const WorldState& s, const EnvConfig& c);

}  // namespace marl::env
