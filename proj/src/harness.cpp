#include "marl/harness.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "marl/checkpoint.hpp"
#include "marl/metrics.hpp"
#include "marl/trainer.hpp"

namespace marl {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

Json stat_block(const std::vector<double>& per_seed) {
    const Quartiles q = quartiles(per_seed);
    Json j;
    j["per_seed"] = per_seed;
    j["median"] = q.median;
    j["p25"] = q.p25;
    j["p75"] = q.p75;
    return j;
}

struct SeedOutcome {
    uint64_t seed;
    TrainResult result;
};

std::vector<SeedOutcome> run_seeds(const RunConfig& cfg, const fs::path& out_dir, bool quiet) {
    const std::string resolved = resolved_config_json(cfg);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", resolved);
    std::vector<SeedOutcome> outcomes;
    for (uint64_t seed : cfg.seeds) {
        if (!quiet) std::cout << "== seed " << seed << " ==" << std::endl;
        TrainResult r = train(cfg, seed, quiet);
        const fs::path seed_dir = out_dir / std::to_string(seed);
        fs::create_directories(seed_dir);
        write_metrics_csv((seed_dir / "metrics.csv").string(), r.rows);
        save_checkpoint((seed_dir / "checkpoint.bin").string(), r.learner, resolved);
        outcomes.push_back(SeedOutcome{seed, std::move(r)});
    }
    return outcomes;
}

Json summary_json(const std::vector<SeedOutcome>& outcomes) {
    std::vector<double> finals, bests, walls;
    Json seeds = Json::array();
    Json episodes = Json::array();
    Json env_steps = Json::array();
    for (const auto& o : outcomes) {
        seeds.push_back(o.seed);
        finals.push_back(o.result.final_win_rate);
        bests.push_back(o.result.best_win_rate);
        walls.push_back(o.result.wall_ms);
        episodes.push_back(o.result.episodes);
        env_steps.push_back(o.result.env_steps);
    }
    Json j;
    j["seeds"] = seeds;
    j["final_win_rate"] = stat_block(finals);
    j["best_win_rate"] = stat_block(bests);
    j["episodes"] = episodes;
    j["env_steps"] = env_steps;
    double total_wall = 0.0;
    for (double w : walls) total_wall += w;
    j["wall_ms"] = Json{{"per_seed", walls}, {"total", total_wall}};
    return j;
}

}  // namespace

int cmd_train(const RunConfig& cfg, bool quiet) {
    try {
        const fs::path out_dir(cfg.out_dir);
        const auto outcomes = run_seeds(cfg, out_dir, quiet);
        write_text(out_dir / "summary.json", summary_json(outcomes).dump(2) + "\n");
        if (!quiet) std::cout << "wrote " << (out_dir / "summary.json").string() << std::endl;
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "train failed: " << e.what() << std::endl;
        return 2;
    }
}

int cmd_ablate(const RunConfig& cfg, bool quiet) {
    try {
        const fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir);
        write_text(out_dir / "config.json", resolved_config_json(cfg));

        std::ofstream csv(out_dir / "ablation.csv", std::ios::binary);
        if (!csv) throw Error("cannot write ablation.csv");
        csv << "mixer,ablation,seed,env_steps,final_test_win_rate,best_test_win_rate,"
               "final_loss_td,final_loss_aux,final_mean_sparse_support,final_mean_visible\n";

        const MixerKind mixers[] = {MixerKind::Additive, MixerKind::Monotonic};
        const AblationMode modes[] = {AblationMode::DenseOnly, AblationMode::S2RL,
                                      AblationMode::SparseOnly};
        for (MixerKind mixer : mixers) {
            for (AblationMode mode : modes) {
                RunConfig sub = cfg;
                sub.mixer = mixer;
                sub.ablation = mode;
                if (mode != AblationMode::S2RL) sub.lambda = 0.0;
                const std::string label = to_string(mixer) + "_" + to_string(mode);
                sub.out_dir = (out_dir / label).string();
                if (!quiet) std::cout << "== condition " << label << " ==" << std::endl;
                const auto outcomes = run_seeds(sub, out_dir / label, quiet);
                write_text(out_dir / label / "summary.json",
                           summary_json(outcomes).dump(2) + "\n");
                for (const auto& o : outcomes) {
                    const MetricsRow& last = o.result.rows.back();
                    csv << to_string(mixer) << ',' << to_string(mode) << ',' << o.seed << ','
                        << o.result.env_steps << ',' << format_g9(o.result.final_win_rate)
                        << ',' << format_g9(o.result.best_win_rate) << ','
                        << format_g9(last.loss_td) << ',' << format_g9(last.loss_aux) << ','
                        << format_g9(o.result.final_mean_sparse_support) << ','
                        << format_g9(o.result.final_mean_visible) << "\n";
                }
            }
        }
        if (!quiet) std::cout << "wrote " << (out_dir / "ablation.csv").string() << std::endl;
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "ablate failed: " << e.what() << std::endl;
        return 2;
    }
}

int cmd_inspect_attention(const std::string& checkpoint_path, uint64_t env_seed, long steps,
                          const std::string& out_dir, bool quiet) {
    try {
        LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
        const env::EnvConfig& ecfg = ckpt.config.env;
        const Learner& L = ckpt.learner;
        const int n = ecfg.allies;
        const int m = env::n_entities(ecfg);
        const int feat = env::entity_feat(ecfg);
        const int na = env::n_actions(ecfg);
        const long row_len = static_cast<long>(m) * feat;

        fs::create_directories(out_dir);
        const fs::path csv_path = fs::path(out_dir) / "attention.csv";
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw Error("cannot write " + csv_path.string());
        csv << "t,agent,entity,dense_weight,sparse_weight,entity_team,entity_distance\n";

        auto team_name = [](env::Team t) {
            switch (t) {
                case env::Team::Enemy: return "enemy";
                case env::Team::Distractor: return "distractor";
                default: return "ally";
            }
        };

        std::mt19937_64 rng(env_seed);
        long t_global = 0;
        while (t_global < steps) {
            env::WorldState s = env::reset(ecfg, rng);
            Tensor h = Tensor::zeros(Shape::of(n, L.agent.hidden_dim()));
            while (!s.terminal && t_global < steps) {
                Tensor obs(Shape::of(n, m, feat));
                Tensor alive(Shape::of(n, m));
                std::vector<std::vector<uint8_t>> masks(n);
                {
                    double* od = obs.mutable_data();
                    double* ad = alive.mutable_data();
                    for (int a = 0; a < n; ++a) {
                        EntitySet es = env::observe(s, a, ecfg);
                        std::memcpy(od + a * row_len, es.entities.data(),
                                    sizeof(double) * row_len);
                        for (int j = 0; j < m; ++j)
                            ad[static_cast<long>(a) * m + j] = es.alive[j];
                        masks[a] = env::avail_actions(s, a, ecfg);
                    }
                }
                AgentForward fwd =
                    agent_forward(obs, alive, h, L.agent, HeadSelect{true, true});
                h = fwd.h_next;

                const double* dw = fwd.dense_weights.data();
                const double* sw = fwd.sparse_weights.data();
                for (int a = 0; a < n; ++a) {
                    if (!s.units[a].alive) continue;
                    for (int e = 0; e < m; ++e) {
                        const int unit = e == 0 ? a : (e - 1 < a ? e - 1 : e);
                        const env::Unit& u = s.units[unit];
                        const double d =
                            std::hypot(u.x - s.units[a].x, u.y - s.units[a].y);
                        const long w_ix = (static_cast<long>(a) * m + 0) * m + e;
                        csv << t_global << ',' << a << ',' << e << ',' << format_g9(dw[w_ix])
                            << ',' << format_g9(sw[w_ix]) << ',' << team_name(u.team) << ','
                            << format_g9(d) << "\n";
                    }
                }

                const Tensor& q = L.acts_with_dense() ? fwd.q_dense : fwd.q_sparse;
                std::vector<int> actions(n);
                for (int a = 0; a < n; ++a) {
                    std::vector<double> qa(q.data() + static_cast<long>(a) * na,
                                           q.data() + static_cast<long>(a + 1) * na);
                    actions[a] = argmax_available(qa, masks[a]);
                }
                env::step(s, actions, ecfg);
                ++t_global;
            }
        }
        if (!quiet) std::cout << "wrote " << csv_path.string() << std::endl;
        return 0;
    } catch (const FileNotFound& e) {
        std::cerr << "inspect-attention failed: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "inspect-attention failed: " << e.what() << std::endl;
        return 2;
    }
}

}  // namespace marl
