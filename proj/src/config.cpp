#include "marl/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace marl {

namespace {

using Json = nlohmann::ordered_json;

struct KeyReader {
    const Json& doc;
    std::vector<std::string> errors;
    std::vector<std::string> seen;

    bool has(const std::string& key) {
        seen.push_back(key);
        return doc.contains(key);
    }
    void number(const std::string& key, double& out, double lo, double hi, bool open_hi = false) {
        if (!has(key)) return;
        const Json& v = doc.at(key);
        if (!v.is_number()) {
            errors.push_back(key + ": expected a number");
            return;
        }
        const double x = v.get<double>();
        const bool ok = x >= lo && (open_hi ? x < hi : x <= hi);
        if (!ok) {
            std::ostringstream os;
            os << key << ": " << x << " outside [" << lo << (open_hi ? "," : ",") << hi
               << (open_hi ? ")" : "]");
            errors.push_back(os.str());
            return;
        }
        out = x;
    }
    void integer(const std::string& key, int& out, long lo, long hi) {
        long v = out;
        integer_long(key, v, lo, hi);
        out = static_cast<int>(v);
    }
    void integer_long(const std::string& key, long& out, long lo, long hi) {
        if (!has(key)) return;
        const Json& v = doc.at(key);
        if (!v.is_number_integer()) {
            errors.push_back(key + ": expected an integer");
            return;
        }
        const long x = v.get<long>();
        if (x < lo || x > hi) {
            errors.push_back(key + ": " + std::to_string(x) + " outside [" + std::to_string(lo) +
                             "," + std::to_string(hi) + "]");
            return;
        }
        out = x;
    }
    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        const Json& v = doc.at(key);
        if (!v.is_boolean()) {
            errors.push_back(key + ": expected a boolean");
            return;
        }
        out = v.get<bool>();
    }
    void text(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const Json& v = doc.at(key);
        if (!v.is_string() || v.get<std::string>().empty()) {
            errors.push_back(key + ": expected a non-empty string");
            return;
        }
        out = v.get<std::string>();
    }
    template <typename Enum>
    void choice(const std::string& key, Enum& out,
                std::initializer_list<std::pair<const char*, Enum>> options) {
        if (!has(key)) return;
        const Json& v = doc.at(key);
        if (v.is_string()) {
            for (const auto& [name, value] : options) {
                if (v.get<std::string>() == name) {
                    out = value;
                    return;
                }
            }
        }
        std::string allowed;
        for (const auto& [name, value] : options) allowed += std::string(name) + " ";
        errors.push_back(key + ": expected one of { " + allowed + "}");
    }
};

}  // namespace

std::string to_string(MixerKind k) {
    return k == MixerKind::Additive ? "vdn" : "qmix";
}
std::string to_string(AblationMode m) {
    switch (m) {
        case AblationMode::DenseOnly: return "dense_only";
        case AblationMode::SparseOnly: return "sparse_only";
        default: return "s2rl";
    }
}
std::string to_string(OptimizerKind o) {
    return o == OptimizerKind::Adam ? "adam" : "rmsprop";
}

RunConfig parse_config_text(const std::string& json_text) {
    Json doc;
    try {
        doc = Json::parse(json_text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("config parse: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("config parse: top level must be an object");

    RunConfig cfg;
    KeyReader r{doc, {}, {}};

    r.integer("allies", cfg.env.allies, 1, 16);
    r.integer("enemies", cfg.env.enemies, 1, 16);
    r.integer("distractors", cfg.env.distractors, 0, 64);
    r.number("arena", cfg.env.arena, 1.0, 1e4);
    r.number("sight", cfg.env.sight, 1e-6, 1e4);
    r.number("ally_range", cfg.env.ally_range, 0.0, 1e4);
    r.number("ally_damage", cfg.env.ally_damage, 0.0, 1e6);
    r.number("enemy_range", cfg.env.enemy_range, 0.0, 1e4);
    r.number("enemy_damage", cfg.env.enemy_damage, 0.0, 1e6);
    r.number("unit_health", cfg.env.unit_health, 1e-6, 1e9);
    r.number("move_step", cfg.env.move_step, 1e-6, 1e4);
    r.integer("episode_limit", cfg.env.episode_limit, 1, 100000);
    r.number("reward_damage", cfg.env.reward_damage, 0.0, 1e6);
    r.number("reward_kill", cfg.env.reward_kill, 0.0, 1e6);
    r.number("reward_win", cfg.env.reward_win, 0.0, 1e6);

    r.choice("mixer", cfg.mixer,
             {{"vdn", MixerKind::Additive}, {"qmix", MixerKind::Monotonic}});
    r.choice("ablation", cfg.ablation,
             {{"s2rl", AblationMode::S2RL},
              {"dense_only", AblationMode::DenseOnly},
              {"sparse_only", AblationMode::SparseOnly}});
    r.choice("optimizer", cfg.optimizer,
             {{"rmsprop", OptimizerKind::RmsProp}, {"adam", OptimizerKind::Adam}});

    r.number("lambda", cfg.lambda, 0.0, 1e6);
    r.number("gamma", cfg.gamma, 0.0, 1.0, /*open_hi=*/true);
    r.number("lr", cfg.lr, 1e-12, 1.0);
    r.number("smoothing", cfg.smoothing, 1e-12, 1.0, /*open_hi=*/true);
    r.number("epsilon_start", cfg.epsilon.start, 0.0, 1.0);
    r.number("epsilon_end", cfg.epsilon.end, 0.0, 1.0);
    r.integer_long("epsilon_anneal_steps", cfg.epsilon.anneal_steps, 1, 1000000000L);
    r.integer("batch_episodes", cfg.batch_episodes, 1, 4096);
    r.integer("buffer_capacity", cfg.buffer_capacity, 1, 1000000);
    r.integer("target_sync_episodes", cfg.target_sync_episodes, 1, 1000000);
    r.integer_long("total_env_steps", cfg.total_env_steps, 0, 100000000000L);
    r.integer("eval_interval_episodes", cfg.eval_interval_episodes, 1, 1000000);
    r.integer("eval_episodes", cfg.eval_episodes, 1, 100000);
    r.boolean("separate_aux_mixer", cfg.separate_aux_mixer);
    r.text("out_dir", cfg.out_dir);

    if (r.has("seeds")) {
        const Json& v = doc.at("seeds");
        if (!v.is_array() || v.empty()) {
            r.errors.push_back("seeds: expected a non-empty array of integers");
        } else {
            cfg.seeds.clear();
            for (const auto& item : v) {
                if (!item.is_number_integer() || item.get<long>() < 0) {
                    r.errors.push_back("seeds: entries must be non-negative integers");
                    break;
                }
                cfg.seeds.push_back(item.get<uint64_t>());
            }
        }
    }

    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (std::find(r.seen.begin(), r.seen.end(), it.key()) == r.seen.end())
            r.errors.push_back(it.key() + ": unknown key");
    }
    if (cfg.buffer_capacity < cfg.batch_episodes)
        r.errors.push_back("buffer_capacity: must be >= batch_episodes");

    if (!r.errors.empty()) throw ValidationError(r.errors);

    // Ablations that drop a head train without the auxiliary term.
    if (cfg.ablation != AblationMode::S2RL) cfg.lambda = 0.0;
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("config file not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string resolved_config_json(const RunConfig& cfg) {
    Json doc;
    doc["allies"] = cfg.env.allies;
    doc["enemies"] = cfg.env.enemies;
    doc["distractors"] = cfg.env.distractors;
    doc["arena"] = cfg.env.arena;
    doc["sight"] = cfg.env.sight;
    doc["ally_range"] = cfg.env.ally_range;
    doc["ally_damage"] = cfg.env.ally_damage;
    doc["enemy_range"] = cfg.env.enemy_range;
    doc["enemy_damage"] = cfg.env.enemy_damage;
    doc["unit_health"] = cfg.env.unit_health;
    doc["move_step"] = cfg.env.move_step;
    doc["episode_limit"] = cfg.env.episode_limit;
    doc["reward_damage"] = cfg.env.reward_damage;
    doc["reward_kill"] = cfg.env.reward_kill;
    doc["reward_win"] = cfg.env.reward_win;
    doc["mixer"] = to_string(cfg.mixer);
    doc["ablation"] = to_string(cfg.ablation);
    doc["optimizer"] = to_string(cfg.optimizer);
    doc["lambda"] = cfg.lambda;
    doc["gamma"] = cfg.gamma;
    doc["lr"] = cfg.lr;
    doc["smoothing"] = cfg.smoothing;
    doc["epsilon_start"] = cfg.epsilon.start;
    doc["epsilon_end"] = cfg.epsilon.end;
    doc["epsilon_anneal_steps"] = cfg.epsilon.anneal_steps;
    doc["batch_episodes"] = cfg.batch_episodes;
    doc["buffer_capacity"] = cfg.buffer_capacity;
    doc["target_sync_episodes"] = cfg.target_sync_episodes;
    doc["total_env_steps"] = cfg.total_env_steps;
    doc["eval_interval_episodes"] = cfg.eval_interval_episodes;
    doc["eval_episodes"] = cfg.eval_episodes;
    doc["seeds"] = cfg.seeds;
    doc["separate_aux_mixer"] = cfg.separate_aux_mixer;
    doc["out_dir"] = cfg.out_dir;
    return doc.dump(2) + "\n";
}

}  // namespace marl
