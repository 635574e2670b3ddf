#pragma once

#include <deque>
#include <random>
#include <string>
#include <vector>

#include "marl/agent.hpp"
#include "marl/config.hpp"
#include "marl/env.hpp"
#include "marl/metrics.hpp"
#include "marl/mixer.hpp"

namespace marl {

// Compact episode record; observations, masks and global states are
// regenerated from the stored world frames when a batch is materialized.
struct Episode {
    std::vector<env::WorldState> frames;       // length() + 1 entries
    std::vector<std::vector<int>> actions;     // per step, one action per agent
    std::vector<double> rewards;               // per step
    std::vector<uint8_t> terminal;             // per step
    bool win = false;

    int length() const { return static_cast<int>(rewards.size()); }
    double total_return() const;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}
    void push(Episode e);
    size_t size() const { return items_.size(); }
    const Episode& at(size_t i) const { return items_[i]; }
    std::vector<const Episode*> sample(size_t n, std::mt19937_64& rng) const;

private:
    std::deque<Episode> items_;
    size_t capacity_;
};

// Materialized minibatch. Row order is episode-major: observation row for
// (episode e, frame t, agent a) sits at obs_row(e, t, a).
struct EpisodeBatch {
    int n_episodes = 0;
    int n_agents = 0;
    int max_len = 0;  // frames per episode = max_len + 1
    int n_entities = 0;
    int entity_feat = 0;
    int n_actions = 0;
    int state_width = 0;

    Tensor obs;                   // [E*(T+1)*N, M, d_E]
    Tensor alive;                 // [E*(T+1)*N, M]
    std::vector<uint8_t> avail;   // obs_row * n_actions
    std::vector<int> actions;     // step_index * n_agents
    std::vector<double> rewards;  // step_index
    std::vector<uint8_t> terminal;
    std::vector<uint8_t> filled;
    Tensor states;                // [E*(T+1), S]

    long frame_row(int e, int t) const { return static_cast<long>(e) * (max_len + 1) + t; }
    long obs_row(int e, int t, int a) const { return frame_row(e, t) * n_agents + a; }
    long step_index(int e, int t) const { return static_cast<long>(e) * max_len + t; }
    long filled_count() const;
};

EpisodeBatch materialize(const std::vector<const Episode*>& episodes, const env::EnvConfig& ecfg);

struct LearnerConfig {
    MixerKind mixer = MixerKind::Monotonic;
    AblationMode ablation = AblationMode::S2RL;
    OptimizerKind optimizer = OptimizerKind::RmsProp;
    double lambda = 1.0;
    double gamma = 0.99;
    double lr = 5e-4;
    double smoothing = 0.99;
    int batch_episodes = 32;
    int target_sync_episodes = 200;
    bool separate_aux_mixer = false;
    double grad_clip = 10.0;
    int loss_chunks = 8;
};
LearnerConfig learner_config(const RunConfig& cfg);

struct Learner {
    LearnerConfig cfg;
    AgentParams agent;
    MixerParams mixer;
    MixerParams aux_mixer;  // only populated when cfg.separate_aux_mixer
    AgentParams target_agent;
    MixerParams target_mixer;
    MixerParams target_aux_mixer;
    RmsPropState rms;
    AdamState adam;
    long episodes = 0;
    long env_steps = 0;
    long train_steps = 0;

    static Learner init(const LearnerConfig& cfg, const env::EnvConfig& ecfg,
                        std::mt19937_64& rng);
    void sync_targets();
    // Syncs when the episode counter has crossed a multiple of the interval.
    bool maybe_sync();
    std::vector<Tensor*> online_params();
    // Head that drives action selection under the configured ablation.
    bool acts_with_dense() const { return cfg.ablation != AblationMode::SparseOnly; }

private:
    long synced_block_ = 0;
};

Episode collect_episode(const env::EnvConfig& ecfg, const Learner& learner, double epsilon,
                        std::mt19937_64& rng);

enum class Head { Dense, Sparse };
// Bootstrap targets from the target networks; zeros at padded steps.
std::vector<double> td_targets(const EpisodeBatch& batch, const Learner& learner, Head head);

struct GradSet {
    std::vector<Tensor> agent;
    std::vector<Tensor> mixer;
    std::vector<Tensor> aux_mixer;
};
struct LossOutput {
    double td = 0.0;
    double aux = 0.0;
    double total = 0.0;
    long filled = 0;
    GradSet grads;
};
LossOutput compute_losses(const EpisodeBatch& batch, const Learner& learner, bool with_grads);

struct TrainStepStats {
    double loss_td = 0.0;
    double loss_aux = 0.0;
    double loss_total = 0.0;
    double grad_norm = 0.0;  // before clipping
    bool synced = false;
};
TrainStepStats train_step(Learner& learner, const ReplayBuffer& buffer,
                          const env::EnvConfig& ecfg, std::mt19937_64& rng);

struct EvalStats {
    double win_rate = 0.0;
    double return_mean = 0.0;
    double mean_sparse_support = 0.0;
    double mean_visible = 0.0;
};
EvalStats evaluate(const env::EnvConfig& ecfg, const Learner& learner, int episodes,
                   std::mt19937_64& rng);
EvalStats evaluate_random(const env::EnvConfig& ecfg, int episodes, std::mt19937_64& rng);

struct TrainResult {
    std::vector<MetricsRow> rows;
    double final_win_rate = 0.0;
    double best_win_rate = 0.0;
    double final_mean_sparse_support = 0.0;
    double final_mean_visible = 0.0;
    long episodes = 0;
    long env_steps = 0;
    double wall_ms = 0.0;
    Learner learner;
};
TrainResult train(const RunConfig& cfg, uint64_t seed, bool quiet);

}  // namespace marl
