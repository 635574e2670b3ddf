#include "marl/env.hpp"

#include <algorithm>
#include <cmath>

namespace marl::env {

namespace {

double dist(const Unit& a, const Unit& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Nearest alive ally to `from`, lowest index on ties. -1 if none.
int nearest_ally(const WorldState& s, const EnvConfig& c, const Unit& from) {
    int best = -1;
    double best_d = 0.0;
    for (int i = 0; i < c.allies; ++i) {
        if (!s.units[i].alive) continue;
        const double d = dist(from, s.units[i]);
        if (best < 0 || d < best_d) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

bool any_alive(const WorldState& s, int begin, int end) {
    for (int i = begin; i < end; ++i)
        if (s.units[i].alive) return true;
    return false;
}

}  // namespace

WorldState reset(const EnvConfig& c, std::mt19937_64& rng) {
    if (c.allies < 1 || c.enemies < 1 || c.distractors < 0 || c.sight <= 0.0 || c.arena <= 0.0 ||
        c.episode_limit < 1)
        throw InvalidConfig("reset: invalid environment configuration");

    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::uniform_real_distribution<double> anywhere(0.0, c.arena);
    WorldState s;
    s.units.reserve(n_entities(c));

    auto spawn_line = [&](Team team, int count, double cx) {
        for (int i = 0; i < count; ++i) {
            Unit u;
            u.team = team;
            u.x = clampd(cx + jitter(rng), 0.0, c.arena);
            u.y = clampd(c.arena / 2.0 + (i - (count - 1) / 2.0) * 2.0 + jitter(rng), 0.0,
                         c.arena);
            u.health = u.max_health = c.unit_health;
            u.alive = true;
            s.units.push_back(u);
        }
    };
    spawn_line(Team::Ally, c.allies, c.arena * 0.25);
    spawn_line(Team::Enemy, c.enemies, c.arena * 0.75);
    // Distractors drawn after combat units so their presence never perturbs
    // the unit spawn stream for a given seed.
    for (int i = 0; i < c.distractors; ++i) {
        Unit u;
        u.team = Team::Distractor;
        u.x = anywhere(rng);
        u.y = anywhere(rng);
        u.alive = true;
        s.units.push_back(u);
    }
    return s;
}

EntitySet observe(const WorldState& s, int agent, const EnvConfig& c) {
    const int m = n_entities(c);
    const int feat = entity_feat(c);
    EntitySet obs;
    obs.entities = Tensor::zeros(Shape::of(m, feat));
    obs.alive.assign(m, 0);

    const Unit& self = s.units[agent];
    if (!self.alive) return obs;  // dead agents observe nothing

    double* d = obs.entities.mutable_data();
    auto write_row = [&](int row, const Unit& u) {
        double* r = d + static_cast<long>(row) * feat;
        r[0] = 1.0;
        r[1] = (u.x - self.x) / c.arena;
        r[2] = (u.y - self.y) / c.arena;
        r[3] = dist(self, u) / c.arena;
        r[4] = u.max_health > 0.0 ? u.health / u.max_health : 0.0;
        r[5] = u.team == Team::Ally ? 1.0 : 0.0;
        r[6] = u.team == Team::Enemy ? 1.0 : 0.0;
        r[7] = u.team == Team::Distractor ? 1.0 : 0.0;
        r[8 + agent] = 1.0;
        obs.alive[row] = 1;
    };

    write_row(0, self);
    int row = 1;
    for (int e = 0; e < m; ++e) {
        if (e == agent) continue;
        const Unit& u = s.units[e];
        if (u.alive && dist(self, u) <= c.sight) write_row(row, u);
        ++row;
    }
    return obs;
}

std::vector<uint8_t> avail_actions(const WorldState& s, int agent, const EnvConfig& c) {
    std::vector<uint8_t> mask(n_actions(c), 0);
    const Unit& self = s.units[agent];
    if (!self.alive) {
        mask[kNoop] = 1;
        return mask;
    }
    mask[kStop] = 1;
    if (self.y + c.move_step <= c.arena) mask[kMoveN] = 1;
    if (self.y - c.move_step >= 0.0) mask[kMoveS] = 1;
    if (self.x + c.move_step <= c.arena) mask[kMoveE] = 1;
    if (self.x - c.move_step >= 0.0) mask[kMoveW] = 1;
    for (int j = 0; j < c.enemies; ++j) {
        const Unit& enemy = s.units[c.allies + j];
        if (enemy.alive && dist(self, enemy) <= c.ally_range) mask[kFirstAttack + j] = 1;
    }
    return mask;
}

StepInfo step(WorldState& s, const std::vector<int>& joint_action, const EnvConfig& c) {
    if (s.terminal) throw EpisodeFinished("step: episode already terminal");
    if (static_cast<int>(joint_action.size()) != c.allies)
        throw ShapeMismatch("step: expected one action per ally");
    for (int i = 0; i < c.allies; ++i) {
        const auto mask = avail_actions(s, i, c);
        const int a = joint_action[i];
        if (a < 0 || a >= n_actions(c) || !mask[a])
            throw UnavailableAction("step: agent " + std::to_string(i) + " action " +
                                    std::to_string(a));
    }

    // Enemy intentions from pre-move positions.
    struct EnemyPlan {
        int attack_target = -1;  // ally index
        int chase_target = -1;
    };
    std::vector<EnemyPlan> plans(c.enemies);
    for (int j = 0; j < c.enemies; ++j) {
        const Unit& enemy = s.units[c.allies + j];
        if (!enemy.alive) continue;
        int in_range = -1;
        double best_d = 0.0;
        for (int i = 0; i < c.allies; ++i) {
            const Unit& ally = s.units[i];
            if (!ally.alive) continue;
            const double d = dist(enemy, ally);
            if (d <= c.enemy_range && (in_range < 0 || d < best_d)) {
                in_range = i;
                best_d = d;
            }
        }
        if (in_range >= 0)
            plans[j].attack_target = in_range;
        else
            plans[j].chase_target = nearest_ally(s, c, enemy);
    }

    // Moves.
    for (int i = 0; i < c.allies; ++i) {
        Unit& u = s.units[i];
        switch (joint_action[i]) {
            case kMoveN: u.y += c.move_step; break;
            case kMoveS: u.y -= c.move_step; break;
            case kMoveE: u.x += c.move_step; break;
            case kMoveW: u.x -= c.move_step; break;
            default: break;
        }
    }
    for (int j = 0; j < c.enemies; ++j) {
        Unit& u = s.units[c.allies + j];
        if (!u.alive || plans[j].chase_target < 0) continue;
        const Unit& target = s.units[plans[j].chase_target];
        const double d = dist(u, target);
        if (d > 1e-9) {
            const double stepping = std::min(c.move_step, d);
            u.x = clampd(u.x + (target.x - u.x) / d * stepping, 0.0, c.arena);
            u.y = clampd(u.y + (target.y - u.y) / d * stepping, 0.0, c.arena);
        }
    }

    // Attacks against post-move positions; damage lands before any death.
    std::vector<double> damage(s.units.size(), 0.0);
    for (int i = 0; i < c.allies; ++i) {
        const int a = joint_action[i];
        if (a < kFirstAttack) continue;
        const int j = c.allies + (a - kFirstAttack);
        if (s.units[j].alive && dist(s.units[i], s.units[j]) <= c.ally_range)
            damage[j] += c.ally_damage;
    }
    for (int j = 0; j < c.enemies; ++j) {
        const int target = plans[j].attack_target;
        if (target < 0 || !s.units[c.allies + j].alive) continue;
        if (dist(s.units[c.allies + j], s.units[target]) <= c.enemy_range)
            damage[target] += c.enemy_damage;
    }

    StepInfo info;
    for (size_t u = 0; u < s.units.size(); ++u) {
        if (damage[u] <= 0.0 || !s.units[u].alive) continue;
        const double dealt = std::min(s.units[u].health, damage[u]);
        s.units[u].health -= dealt;
        if (s.units[u].team == Team::Enemy) {
            info.damage_dealt += dealt;
            if (s.units[u].health <= 0.0) ++info.enemy_deaths;
        }
        if (s.units[u].health <= 0.0) s.units[u].alive = false;
    }

    s.t += 1;
    const bool enemies_alive = any_alive(s, c.allies, c.allies + c.enemies);
    const bool allies_alive = any_alive(s, 0, c.allies);
    info.win = !enemies_alive;
    info.terminal = !enemies_alive || !allies_alive || s.t >= c.episode_limit;
    info.reward = c.reward_damage * info.damage_dealt + c.reward_kill * info.enemy_deaths +
                  (info.win ? c.reward_win : 0.0);
    s.terminal = info.terminal;
    s.win = info.win;
    return info;
}

Tensor global_state(const WorldState& s, const EnvConfig& c) {
    Tensor out(Shape::of(state_dim(c)));
    double* d = out.mutable_data();
    for (size_t u = 0; u < s.units.size(); ++u) {
        const Unit& unit = s.units[u];
        double* r = d + u * 6;
        r[0] = unit.x / c.arena;
        r[1] = unit.y / c.arena;
        r[2] = unit.max_health > 0.0 && unit.alive ? unit.health / unit.max_health : 0.0;
        r[3] = unit.team == Team::Ally ? 1.0 : 0.0;
        r[4] = unit.team == Team::Enemy ? 1.0 : 0.0;
        r[5] = unit.team == Team::Distractor ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace marl::env
