#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "marl/env.hpp"

using namespace marl;
using namespace marl::env;

namespace {

EnvConfig small_cfg() {
    EnvConfig c;
    c.allies = 2;
    c.enemies = 2;
    c.distractors = 1;
    return c;
}

std::vector<int> random_actions(const WorldState& s, const EnvConfig& c, std::mt19937_64& rng) {
    std::vector<int> out(c.allies);
    for (int a = 0; a < c.allies; ++a) {
        const auto mask = avail_actions(s, a, c);
        std::vector<int> options;
        for (size_t u = 0; u < mask.size(); ++u)
            if (mask[u]) options.push_back(static_cast<int>(u));
        std::uniform_int_distribution<size_t> pick(0, options.size() - 1);
        out[a] = options[pick(rng)];
    }
    return out;
}

}  // namespace

TEST_CASE("reset: counts, determinism, distractor independence") {
    EnvConfig c;
    std::mt19937_64 rng(7);
    WorldState s = reset(c, rng);
    CHECK(static_cast<int>(s.units.size()) == 12);
    CHECK(n_entities(c) == 12);
    EntitySet obs = observe(s, 0, c);
    CHECK(obs.rows() == 12);

    EnvConfig no_d = c;
    no_d.distractors = 0;
    std::mt19937_64 r1(9);
    WorldState sd = reset(no_d, r1);
    CHECK(static_cast<int>(sd.units.size()) == 6);
    CHECK(observe(sd, 0, no_d).rows() == 6);

    std::mt19937_64 r2(42), r3(42);
    WorldState a = reset(c, r2);
    WorldState b = reset(c, r3);
    for (size_t i = 0; i < a.units.size(); ++i) {
        CHECK(a.units[i].x == b.units[i].x);
        CHECK(a.units[i].y == b.units[i].y);
    }

    // same seed, distractors on/off: combat units spawn identically
    std::mt19937_64 r4(42);
    WorldState nd = reset(no_d, r4);
    for (int i = 0; i < 6; ++i) {
        CHECK(a.units[i].x == nd.units[i].x);
        CHECK(a.units[i].y == nd.units[i].y);
    }

    EnvConfig bad = c;
    bad.allies = 0;
    std::mt19937_64 r5(1);
    CHECK_THROWS_AS(reset(bad, r5), InvalidConfig);
}

TEST_CASE("observe: self row, sight masking, reflection symmetry") {
    EnvConfig c = small_cfg();
    std::mt19937_64 rng(11);
    WorldState s = reset(c, rng);

    EntitySet obs = observe(s, 1, c);
    CHECK(obs.alive[0] == 1);
    CHECK(obs.entities.at(0, 0) == 1.0);   // visible flag
    CHECK(obs.entities.at(0, 1) == 0.0);   // rel x
    CHECK(obs.entities.at(0, 2) == 0.0);   // rel y
    CHECK(obs.entities.at(0, 3) == 0.0);   // distance
    CHECK(obs.entities.at(0, 4) == 1.0);   // health fraction
    CHECK(obs.entities.at(0, 5) == 1.0);   // ally one-hot
    CHECK(obs.entities.at(0, 8 + 1) == 1.0);  // observer id

    // drag one enemy out of sight
    WorldState far = s;
    far.units[2].x = s.units[1].x + c.sight + 5.0;
    far.units[2].y = s.units[1].y;
    EntitySet obs2 = observe(far, 1, c);
    const int enemy_row = 2;  // rows: self, other ally, enemy0, enemy1, distractor
    CHECK(obs2.alive[enemy_row] == 0);
    for (int j = 0; j < obs2.feat(); ++j) CHECK(obs2.entities.at(enemy_row, j) == 0.0);

    // mirror the world across the arena midline: observations reflect in y
    WorldState mirrored = s;
    for (auto& u : mirrored.units) u.y = c.arena - u.y;
    EntitySet base = observe(s, 0, c);
    EntitySet refl = observe(mirrored, 0, c);
    for (int r = 0; r < base.rows(); ++r) {
        CHECK(refl.entities.at(r, 1) == doctest::Approx(base.entities.at(r, 1)).epsilon(1e-12));
        CHECK(refl.entities.at(r, 2) ==
              doctest::Approx(-base.entities.at(r, 2)).epsilon(1e-12));
        CHECK(refl.entities.at(r, 3) == doctest::Approx(base.entities.at(r, 3)).epsilon(1e-12));
    }

    // dead observers see nothing
    WorldState dead = s;
    dead.units[0].alive = false;
    dead.units[0].health = 0.0;
    EntitySet blind = observe(dead, 0, c);
    for (int r = 0; r < blind.rows(); ++r) CHECK(blind.alive[r] == 0);
}

TEST_CASE("avail_actions: death, boundaries, attack range") {
    EnvConfig c = small_cfg();
    std::mt19937_64 rng(13);
    WorldState s = reset(c, rng);

    WorldState dead = s;
    dead.units[0].alive = false;
    auto mask = avail_actions(dead, 0, c);
    CHECK(mask[kNoop] == 1);
    int count = 0;
    for (uint8_t m : mask) count += m;
    CHECK(count == 1);

    WorldState corner = s;
    corner.units[0].x = 0.0;
    corner.units[0].y = 0.0;
    mask = avail_actions(corner, 0, c);
    CHECK(mask[kNoop] == 0);
    CHECK(mask[kStop] == 1);
    CHECK(mask[kMoveW] == 0);
    CHECK(mask[kMoveS] == 0);
    CHECK(mask[kMoveN] == 1);
    CHECK(mask[kMoveE] == 1);

    WorldState near = s;
    near.units[0].x = near.units[2].x - c.ally_range + 0.5;
    near.units[0].y = near.units[2].y;
    mask = avail_actions(near, 0, c);
    CHECK(mask[kFirstAttack + 0] == 1);

    WorldState alone = s;
    for (int j = 0; j < c.enemies; ++j) {
        alone.units[c.allies + j].x = 0.0;
        alone.units[c.allies + j].y = 0.0;
        alone.units[0].x = c.arena;
        alone.units[0].y = c.arena;
    }
    mask = avail_actions(alone, 0, c);
    CHECK(mask[kFirstAttack + 0] == 0);
    CHECK(mask[kFirstAttack + 1] == 0);
}

TEST_CASE("step: null step, kill and win bonus, error paths") {
    EnvConfig c = small_cfg();
    c.distractors = 0;
    WorldState s;
    // hand-built far-apart world: no unit in any range
    for (int i = 0; i < 2; ++i) {
        Unit u;
        u.team = Team::Ally;
        u.x = 1.0 + i;
        u.y = 1.0;
        u.health = u.max_health = c.unit_health;
        u.alive = true;
        s.units.push_back(u);
    }
    for (int j = 0; j < 2; ++j) {
        Unit u;
        u.team = Team::Enemy;
        u.x = 14.0 - j;
        u.y = 15.0;
        u.health = u.max_health = c.unit_health;
        u.alive = true;
        s.units.push_back(u);
    }

    WorldState still = s;
    StepInfo info = step(still, {kStop, kStop}, c);
    CHECK(info.reward == 0.0);
    CHECK(still.t == 1);
    CHECK_FALSE(info.terminal);
    // enemies chased, allies stood still
    CHECK(still.units[0].x == s.units[0].x);
    CHECK(still.units[2].x < s.units[2].x);

    // last enemy at 1 health, in range: kill + win bonuses on top of damage
    WorldState final_blow = s;
    final_blow.units[3].alive = false;
    final_blow.units[3].health = 0.0;
    final_blow.units[2].x = final_blow.units[0].x + 1.0;
    final_blow.units[2].y = final_blow.units[0].y;
    final_blow.units[2].health = 1.0;
    StepInfo win = step(final_blow, {kFirstAttack + 0, kStop}, c);
    CHECK(win.terminal);
    CHECK(win.win);
    CHECK(win.enemy_deaths == 1);
    CHECK(win.damage_dealt == doctest::Approx(1.0));  // overkill does not count
    CHECK(win.reward ==
          doctest::Approx(c.reward_damage * 1.0 + c.reward_kill + c.reward_win));
    CHECK_THROWS_AS(step(final_blow, {kNoop, kNoop}, c), EpisodeFinished);

    WorldState bad = s;
    CHECK_THROWS_AS(step(bad, {kFirstAttack + 0, kStop}, c), UnavailableAction);
    CHECK_THROWS_AS(step(bad, {kNoop, kStop}, c), UnavailableAction);  // alive noop masked
}

TEST_CASE("random rollouts keep health sane and terminate") {
    EnvConfig c;
    std::mt19937_64 rng(17);
    for (int ep = 0; ep < 5; ++ep) {
        WorldState s = reset(c, rng);
        double enemy_total = 0.0;
        for (int j = 0; j < c.enemies; ++j) enemy_total += s.units[c.allies + j].health;
        int guard = 0;
        while (!s.terminal) {
            step(s, random_actions(s, c, rng), c);
            double now = 0.0;
            for (int j = 0; j < c.enemies; ++j) {
                CHECK(s.units[c.allies + j].health >= 0.0);
                now += s.units[c.allies + j].health;
            }
            CHECK(now <= enemy_total + 1e-12);
            enemy_total = now;
            for (const auto& u : s.units) CHECK(u.health >= 0.0);
            CHECK(++guard <= c.episode_limit);
        }
        CHECK(s.t <= c.episode_limit);
    }
}

TEST_CASE("distractors never touch rewards or unit health") {
    EnvConfig with_d;
    EnvConfig no_d = with_d;
    no_d.distractors = 0;

    std::mt19937_64 r1(23), r2(23), script_rng(29);
    WorldState a = reset(with_d, r1);
    WorldState b = reset(no_d, r2);

    while (!a.terminal && !b.terminal) {
        const auto actions = random_actions(a, with_d, script_rng);
        StepInfo ia = step(a, actions, with_d);
        StepInfo ib = step(b, actions, no_d);
        CHECK(ia.reward == ib.reward);
        CHECK(ia.terminal == ib.terminal);
        for (int i = 0; i < with_d.allies + with_d.enemies; ++i) {
            CHECK(a.units[i].health == b.units[i].health);
            CHECK(a.units[i].x == b.units[i].x);
            CHECK(a.units[i].y == b.units[i].y);
        }
    }
    CHECK(a.terminal == b.terminal);
}

TEST_CASE("global state layout and dead-unit handling") {
    EnvConfig c = small_cfg();
    std::mt19937_64 rng(31);
    WorldState s = reset(c, rng);
    Tensor g = global_state(s, c);
    CHECK(g.shape() == Shape::of(6 * 5));
    CHECK(g.at(0) == doctest::Approx(s.units[0].x / c.arena));
    CHECK(g.at(2) == doctest::Approx(1.0));  // full health
    CHECK(g.at(3) == 1.0);                   // ally one-hot

    std::mt19937_64 r2(31);
    WorldState same = reset(c, r2);
    Tensor g2 = global_state(same, c);
    for (long i = 0; i < g.size(); ++i) CHECK(g.data()[i] == g2.data()[i]);

    WorldState dead = s;
    dead.units[2].alive = false;
    Tensor g3 = global_state(dead, c);
    CHECK(g3.at(2 * 6 + 2) == 0.0);                                  // health fraction zeroed
    CHECK(g3.at(2 * 6 + 0) == doctest::Approx(s.units[2].x / c.arena));  // position kept
}

// Golden ten-step trace under a fixed seed and action script. Regenerate with
// MARL_REGEN_GOLDEN=1 after any deliberate environment change.
TEST_CASE("golden trace replay") {
    const std::string path = std::string(MARL_TEST_DATA_DIR) + "/env_golden_trace.txt";
    EnvConfig c;
    std::mt19937_64 rng(1234);
    WorldState s = reset(c, rng);
    std::mt19937_64 script(777);

    std::ostringstream trace;
    trace.precision(17);
    for (int t = 0; t < 10 && !s.terminal; ++t) {
        const auto actions = random_actions(s, c, script);
        StepInfo info = step(s, actions, c);
        trace << "t=" << s.t << " r=" << info.reward << " term=" << info.terminal;
        for (const auto& u : s.units)
            trace << " " << u.x << "," << u.y << "," << u.health << "," << (u.alive ? 1 : 0);
        trace << "\n";
    }

    if (std::getenv("MARL_REGEN_GOLDEN")) {
        std::ofstream out(path, std::ios::binary);
        REQUIRE(out.good());
        out << trace.str();
        MESSAGE("regenerated ", path);
        return;
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden fixture; run with MARL_REGEN_GOLDEN=1");
    std::ostringstream expect;
    expect << in.rdbuf();
    CHECK(trace.str() == expect.str());
}
