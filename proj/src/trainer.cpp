#include "marl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <numeric>
#include <thread>

namespace marl {

namespace {

AgentParams attach(Tape& tape, const AgentParams& p) {
    AgentParams c = p;
    c.visit([&](const char*, Tensor& t) { t = tape.leaf(t); });
    return c;
}

MixerParams attach(Tape& tape, const MixerParams& p) {
    MixerParams c = p;
    c.visit([&](const char*, Tensor& t) { t = tape.leaf(t); });
    return c;
}

template <typename P>
int param_count(const P& p) {
    int n = 0;
    p.visit([&](const char*, const Tensor&) { ++n; });
    return n;
}

// Frame slices for episodes [e0,e1) at frame t.
Tensor gather_obs(const EpisodeBatch& b, int e0, int e1, int t) {
    const int ec = e1 - e0;
    const long row_len = static_cast<long>(b.n_entities) * b.entity_feat;
    Tensor out(Shape::of(ec * b.n_agents, b.n_entities, b.entity_feat));
    double* d = out.mutable_data();
    const double* src = b.obs.data();
    for (int e = e0; e < e1; ++e)
        std::memcpy(d + static_cast<long>(e - e0) * b.n_agents * row_len,
                    src + b.obs_row(e, t, 0) * row_len,
                    sizeof(double) * row_len * b.n_agents);
    return out;
}

Tensor gather_alive(const EpisodeBatch& b, int e0, int e1, int t) {
    const int ec = e1 - e0;
    Tensor out(Shape::of(ec * b.n_agents, b.n_entities));
    double* d = out.mutable_data();
    const double* src = b.alive.data();
    for (int e = e0; e < e1; ++e)
        std::memcpy(d + static_cast<long>(e - e0) * b.n_agents * b.n_entities,
                    src + b.obs_row(e, t, 0) * b.n_entities,
                    sizeof(double) * static_cast<long>(b.n_entities) * b.n_agents);
    return out;
}

Tensor gather_states(const EpisodeBatch& b, int e0, int e1, int t) {
    const int ec = e1 - e0;
    Tensor out(Shape::of(ec, b.state_width));
    double* d = out.mutable_data();
    const double* src = b.states.data();
    for (int e = e0; e < e1; ++e)
        std::memcpy(d + static_cast<long>(e - e0) * b.state_width,
                    src + b.frame_row(e, t) * b.state_width, sizeof(double) * b.state_width);
    return out;
}

int chunk_max_len(const EpisodeBatch& b, int e0, int e1) {
    int mx = 0;
    for (int e = e0; e < e1; ++e) {
        int len = 0;
        for (int t = 0; t < b.max_len; ++t)
            if (b.filled[b.step_index(e, t)]) len = t + 1;
        mx = std::max(mx, len);
    }
    return mx;
}

// Bootstrap targets for episodes [e0,e1), one rollout of the target network
// shared by both heads. Output laid out as (e-e0)*max_len + t.
struct TargetPair {
    std::vector<double> dense;
    std::vector<double> sparse;
};
TargetPair targets_range(const EpisodeBatch& b, const Learner& L, bool want_dense,
                         bool want_sparse, int e0, int e1, int tc) {
    const int ec = e1 - e0;
    const int n = b.n_agents;
    const int na = b.n_actions;
    TargetPair out;
    if (want_dense) out.dense.assign(static_cast<long>(ec) * b.max_len, 0.0);
    if (want_sparse) out.sparse.assign(static_cast<long>(ec) * b.max_len, 0.0);
    if (tc == 0) return out;

    // Mixed greedy target value per frame 1..tc, per head.
    std::vector<double> ytot_dense, ytot_sparse;
    if (want_dense) ytot_dense.assign(static_cast<long>(ec) * (tc + 1), 0.0);
    if (want_sparse) ytot_sparse.assign(static_cast<long>(ec) * (tc + 1), 0.0);

    Tensor h = Tensor::zeros(Shape::of(ec * n, L.target_agent.hidden_dim()));
    for (int f = 0; f <= tc; ++f) {
        AgentForward fwd =
            agent_forward(gather_obs(b, e0, e1, f), gather_alive(b, e0, e1, f), h,
                          L.target_agent, HeadSelect{want_dense, want_sparse});
        h = fwd.h_next;
        if (f == 0) continue;

        Tensor states = gather_states(b, e0, e1, f);
        auto mixed_greedy = [&](const Tensor& q, const MixerParams& tmix,
                                std::vector<double>& ytot) {
            Tensor util(Shape::of(ec, n));
            double* ud = util.mutable_data();
            const double* qd = q.data();
            for (int e = 0; e < ec; ++e) {
                for (int a = 0; a < n; ++a) {
                    const long row = static_cast<long>(e) * n + a;
                    const uint8_t* mask = b.avail.data() + b.obs_row(e0 + e, f, a) * na;
                    double best = 0.0;
                    bool any = false;
                    for (int u = 0; u < na; ++u) {
                        if (!mask[u]) continue;
                        if (!any || qd[row * na + u] > best) {
                            best = qd[row * na + u];
                            any = true;
                        }
                    }
                    ud[row] = best;
                }
            }
            Tensor mixed = mix_batch(util, states, tmix);
            std::memcpy(ytot.data() + static_cast<long>(f) * ec, mixed.data(),
                        sizeof(double) * ec);
        };
        if (want_dense) mixed_greedy(fwd.q_dense, L.target_mixer, ytot_dense);
        if (want_sparse)
            mixed_greedy(fwd.q_sparse,
                         L.cfg.separate_aux_mixer ? L.target_aux_mixer : L.target_mixer,
                         ytot_sparse);
    }

    const double gamma = L.cfg.gamma;
    auto assemble = [&](const std::vector<double>& ytot, std::vector<double>& targets) {
        for (int e = 0; e < ec; ++e) {
            for (int t = 0; t < tc; ++t) {
                const long si = b.step_index(e0 + e, t);
                if (!b.filled[si]) continue;
                const double boot =
                    b.terminal[si] ? 0.0 : ytot[static_cast<long>(t + 1) * ec + e];
                targets[static_cast<long>(e) * b.max_len + t] = b.rewards[si] + gamma * boot;
            }
        }
    };
    if (want_dense) assemble(ytot_dense, out.dense);
    if (want_sparse) assemble(ytot_sparse, out.sparse);
    return out;
}

struct ChunkResult {
    double sse_dense = 0.0;
    double sse_sparse = 0.0;
    GradMap grads;
    bool has_grads = false;
    std::exception_ptr err;
};

void run_chunk(const EpisodeBatch& b, const Learner& L, int e0, int e1, bool with_grads,
               ChunkResult& out) {
    try {
        const AblationMode mode = L.cfg.ablation;
        const bool want_dense = mode != AblationMode::SparseOnly;
        const bool want_sparse = mode != AblationMode::DenseOnly;
        const int ec = e1 - e0;
        const int n = b.n_agents;
        const int na = b.n_actions;
        const int tc = chunk_max_len(b, e0, e1);

        TargetPair targets = targets_range(b, L, want_dense, want_sparse, e0, e1, tc);
        const std::vector<double>& yd = targets.dense;
        const std::vector<double>& ys = targets.sparse;

        Tape tape;
        AgentParams ap = with_grads ? attach(tape, L.agent) : L.agent;
        MixerParams mp = with_grads ? attach(tape, L.mixer) : L.mixer;
        MixerParams xp;
        if (L.cfg.separate_aux_mixer)
            xp = with_grads ? attach(tape, L.aux_mixer) : L.aux_mixer;

        Tensor h = Tensor::zeros(Shape::of(ec * n, L.agent.hidden_dim()));
        Tensor sse_d = Tensor::scalar(0.0);
        Tensor sse_s = Tensor::scalar(0.0);
        HeadSelect hs{want_dense, want_sparse};

        for (int t = 0; t < tc; ++t) {
            AgentForward fwd = agent_forward(gather_obs(b, e0, e1, t),
                                             gather_alive(b, e0, e1, t), h, ap, hs);
            h = fwd.h_next;

            std::vector<int> acts(static_cast<size_t>(ec) * n, 0);
            for (int e = 0; e < ec; ++e)
                for (int a = 0; a < n; ++a)
                    acts[static_cast<size_t>(e) * n + a] =
                        b.actions[b.step_index(e0 + e, t) * n + a];

            Tensor filled(Shape::of(ec));
            {
                double* fd = filled.mutable_data();
                for (int e = 0; e < ec; ++e)
                    fd[e] = b.filled[b.step_index(e0 + e, t)] ? 1.0 : 0.0;
            }
            Tensor states = gather_states(b, e0, e1, t);

            auto head_sse = [&](const Tensor& q, const MixerParams& mix_p,
                                const std::vector<double>& targets) {
                Tensor util = reshape(gather_cols(q, acts), Shape::of(ec, n));
                Tensor qtot = mix_batch(util, states, mix_p);
                Tensor y(Shape::of(ec));
                double* yv = y.mutable_data();
                for (int e = 0; e < ec; ++e)
                    yv[e] = targets[static_cast<long>(e) * b.max_len + t];
                Tensor diff = sub(qtot, y);
                return sum_all(mul(mul(diff, diff), filled));
            };
            if (want_dense) sse_d = add(sse_d, head_sse(fwd.q_dense, mp, yd));
            if (want_sparse)
                sse_s = add(sse_s,
                            head_sse(fwd.q_sparse, L.cfg.separate_aux_mixer ? xp : mp, ys));
        }

        out.sse_dense = sse_d.item();
        out.sse_sparse = sse_s.item();
        if (with_grads) {
            Tensor root;
            if (mode == AblationMode::SparseOnly)
                root = sse_s;
            else if (mode == AblationMode::DenseOnly)
                root = sse_d;
            else
                root = add(sse_d, scale(sse_s, L.cfg.lambda));
            out.grads = tape.backward(root);
            out.has_grads = true;
        }
    } catch (...) {
        out.err = std::current_exception();
    }
}

}  // namespace

double Episode::total_return() const {
    return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

void ReplayBuffer::push(Episode e) {
    items_.push_back(std::move(e));
    while (items_.size() > capacity_) items_.pop_front();
}

std::vector<const Episode*> ReplayBuffer::sample(size_t n, std::mt19937_64& rng) const {
    if (items_.size() < n)
        throw InsufficientData("sample: buffer holds " + std::to_string(items_.size()) +
                               " episodes, need " + std::to_string(n));
    std::vector<size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<const Episode*> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(&items_[idx[i]]);
    }
    return out;
}

long EpisodeBatch::filled_count() const {
    long c = 0;
    for (uint8_t f : filled) c += f;
    return c;
}

EpisodeBatch materialize(const std::vector<const Episode*>& episodes,
                         const env::EnvConfig& ecfg) {
    if (episodes.empty()) throw EmptyBatch("materialize: no episodes");
    EpisodeBatch b;
    b.n_episodes = static_cast<int>(episodes.size());
    b.n_agents = ecfg.allies;
    b.n_entities = env::n_entities(ecfg);
    b.entity_feat = env::entity_feat(ecfg);
    b.n_actions = env::n_actions(ecfg);
    b.state_width = env::state_dim(ecfg);
    for (const Episode* ep : episodes) b.max_len = std::max(b.max_len, ep->length());
    if (b.max_len == 0) throw EmptyBatch("materialize: zero-length episodes");

    const long obs_rows = static_cast<long>(b.n_episodes) * (b.max_len + 1) * b.n_agents;
    if (obs_rows * b.n_entities * b.entity_feat > (1L << 31))
        throw Error("materialize: batch too large to address");
    b.obs = Tensor::zeros(Shape::of(static_cast<int>(obs_rows), b.n_entities, b.entity_feat));
    b.alive = Tensor::zeros(Shape::of(static_cast<int>(obs_rows), b.n_entities));
    b.avail.assign(obs_rows * b.n_actions, 0);
    b.actions.assign(static_cast<long>(b.n_episodes) * b.max_len * b.n_agents, env::kNoop);
    b.rewards.assign(static_cast<long>(b.n_episodes) * b.max_len, 0.0);
    b.terminal.assign(b.rewards.size(), 0);
    b.filled.assign(b.rewards.size(), 0);
    b.states = Tensor::zeros(
        Shape::of(static_cast<int>(static_cast<long>(b.n_episodes) * (b.max_len + 1)),
                  b.state_width));

    double* obs_d = b.obs.mutable_data();
    double* alive_d = b.alive.mutable_data();
    double* states_d = b.states.mutable_data();
    const long row_len = static_cast<long>(b.n_entities) * b.entity_feat;

    for (int e = 0; e < b.n_episodes; ++e) {
        const Episode& ep = *episodes[e];
        for (int t = 0; t <= ep.length(); ++t) {
            const env::WorldState& frame = ep.frames[t];
            Tensor gs = env::global_state(frame, ecfg);
            std::memcpy(states_d + b.frame_row(e, t) * b.state_width, gs.data(),
                        sizeof(double) * b.state_width);
            for (int a = 0; a < b.n_agents; ++a) {
                const long row = b.obs_row(e, t, a);
                EntitySet es = env::observe(frame, a, ecfg);
                std::memcpy(obs_d + row * row_len, es.entities.data(),
                            sizeof(double) * row_len);
                for (int m = 0; m < b.n_entities; ++m)
                    alive_d[row * b.n_entities + m] = es.alive[m] ? 1.0 : 0.0;
                const auto mask = env::avail_actions(frame, a, ecfg);
                std::memcpy(b.avail.data() + row * b.n_actions, mask.data(), mask.size());
            }
        }
        // Padding frames keep noop available so greedy maxima stay defined.
        for (int t = ep.length() + 1; t <= b.max_len; ++t)
            for (int a = 0; a < b.n_agents; ++a)
                b.avail[b.obs_row(e, t, a) * b.n_actions + env::kNoop] = 1;
        for (int t = 0; t < ep.length(); ++t) {
            const long si = b.step_index(e, t);
            for (int a = 0; a < b.n_agents; ++a)
                b.actions[si * b.n_agents + a] = ep.actions[t][a];
            b.rewards[si] = ep.rewards[t];
            b.terminal[si] = ep.terminal[t];
            b.filled[si] = 1;
        }
    }
    return b;
}

LearnerConfig learner_config(const RunConfig& cfg) {
    LearnerConfig lc;
    lc.mixer = cfg.mixer;
    lc.ablation = cfg.ablation;
    lc.optimizer = cfg.optimizer;
    lc.lambda = cfg.lambda;
    lc.gamma = cfg.gamma;
    lc.lr = cfg.lr;
    lc.smoothing = cfg.smoothing;
    lc.batch_episodes = cfg.batch_episodes;
    lc.target_sync_episodes = cfg.target_sync_episodes;
    lc.separate_aux_mixer = cfg.separate_aux_mixer;
    return lc;
}

Learner Learner::init(const LearnerConfig& cfg, const env::EnvConfig& ecfg,
                      std::mt19937_64& rng) {
    Learner L;
    L.cfg = cfg;
    L.agent = AgentParams::init(env::entity_feat(ecfg), env::n_actions(ecfg), rng);
    L.mixer = cfg.mixer == MixerKind::Additive
                  ? MixerParams::additive(ecfg.allies)
                  : MixerParams::monotonic(ecfg.allies, env::state_dim(ecfg), rng);
    if (cfg.separate_aux_mixer)
        L.aux_mixer = cfg.mixer == MixerKind::Additive
                          ? MixerParams::additive(ecfg.allies)
                          : MixerParams::monotonic(ecfg.allies, env::state_dim(ecfg), rng);
    L.sync_targets();
    return L;
}

void Learner::sync_targets() {
    target_agent = agent;
    target_mixer = mixer;
    target_aux_mixer = aux_mixer;
}

bool Learner::maybe_sync() {
    const long block = episodes / cfg.target_sync_episodes;
    if (block > synced_block_) {
        sync_targets();
        synced_block_ = block;
        return true;
    }
    return false;
}

std::vector<Tensor*> Learner::online_params() {
    std::vector<Tensor*> out;
    agent.visit([&](const char*, Tensor& t) { out.push_back(&t); });
    mixer.visit([&](const char*, Tensor& t) { out.push_back(&t); });
    if (cfg.separate_aux_mixer)
        aux_mixer.visit([&](const char*, Tensor& t) { out.push_back(&t); });
    return out;
}

Episode collect_episode(const env::EnvConfig& ecfg, const Learner& learner, double epsilon,
                        std::mt19937_64& rng) {
    env::WorldState s = env::reset(ecfg, rng);
    Episode ep;
    ep.frames.push_back(s);

    const int n = ecfg.allies;
    const int m = env::n_entities(ecfg);
    const int feat = env::entity_feat(ecfg);
    const int na = env::n_actions(ecfg);
    const long row_len = static_cast<long>(m) * feat;
    HeadSelect hs{learner.acts_with_dense(), !learner.acts_with_dense()};
    Tensor h = Tensor::zeros(Shape::of(n, learner.agent.hidden_dim()));

    while (!s.terminal) {
        Tensor obs(Shape::of(n, m, feat));
        Tensor alive(Shape::of(n, m));
        std::vector<std::vector<uint8_t>> masks(n);
        {
            double* od = obs.mutable_data();
            double* ad = alive.mutable_data();
            for (int a = 0; a < n; ++a) {
                EntitySet es = env::observe(s, a, ecfg);
                std::memcpy(od + a * row_len, es.entities.data(), sizeof(double) * row_len);
                for (int j = 0; j < m; ++j) ad[static_cast<long>(a) * m + j] = es.alive[j];
                masks[a] = env::avail_actions(s, a, ecfg);
            }
        }
        AgentForward fwd = agent_forward(obs, alive, h, learner.agent, hs);
        h = fwd.h_next;
        const Tensor& q = hs.dense ? fwd.q_dense : fwd.q_sparse;

        std::vector<int> actions(n);
        for (int a = 0; a < n; ++a) {
            std::vector<double> qa(q.data() + static_cast<long>(a) * na,
                                   q.data() + static_cast<long>(a + 1) * na);
            actions[a] = select_action(qa, masks[a], epsilon, rng);
        }
        env::StepInfo info = env::step(s, actions, ecfg);
        ep.actions.push_back(actions);
        ep.rewards.push_back(info.reward);
        ep.terminal.push_back(info.terminal ? 1 : 0);
        ep.frames.push_back(s);
    }
    ep.win = s.win;
    return ep;
}

std::vector<double> td_targets(const EpisodeBatch& batch, const Learner& learner, Head head) {
    TargetPair out =
        targets_range(batch, learner, head == Head::Dense, head == Head::Sparse, 0,
                      batch.n_episodes, chunk_max_len(batch, 0, batch.n_episodes));
    return head == Head::Dense ? std::move(out.dense) : std::move(out.sparse);
}

LossOutput compute_losses(const EpisodeBatch& batch, const Learner& learner, bool with_grads) {
    if (batch.n_episodes == 0) throw EmptyBatch("compute_losses: empty batch");
    const long filled = batch.filled_count();
    if (filled == 0) throw EmptyBatch("compute_losses: no filled steps");

    const int chunks = std::max(1, std::min(learner.cfg.loss_chunks, batch.n_episodes));
    const int per = (batch.n_episodes + chunks - 1) / chunks;
    std::vector<ChunkResult> results(chunks);
    {
        std::vector<std::thread> workers;
        workers.reserve(chunks);
        for (int c = 0; c < chunks; ++c) {
            const int e0 = c * per;
            const int e1 = std::min(batch.n_episodes, e0 + per);
            if (e0 >= e1) continue;
            workers.emplace_back(run_chunk, std::cref(batch), std::cref(learner), e0, e1,
                                 with_grads, std::ref(results[c]));
        }
        for (auto& w : workers) w.join();
    }
    for (const auto& r : results)
        if (r.err) std::rethrow_exception(r.err);

    double sse_dense = 0.0, sse_sparse = 0.0;
    for (const auto& r : results) {
        sse_dense += r.sse_dense;
        sse_sparse += r.sse_sparse;
    }

    const AblationMode mode = learner.cfg.ablation;
    LossOutput out;
    out.filled = filled;
    out.td = (mode == AblationMode::SparseOnly ? sse_sparse : sse_dense) / filled;
    out.aux = mode == AblationMode::S2RL ? sse_sparse / filled : 0.0;
    out.total = out.td + learner.cfg.lambda * out.aux;

    if (with_grads) {
        const int n_agent = param_count(learner.agent);
        const int n_mixer = param_count(learner.mixer);
        const int n_aux = learner.cfg.separate_aux_mixer ? param_count(learner.aux_mixer) : 0;
        std::vector<Tensor> total(static_cast<size_t>(n_agent + n_mixer + n_aux));
        for (const auto& r : results) {
            if (!r.has_grads) continue;
            for (size_t i = 0; i < total.size(); ++i) {
                if (total[i].empty())
                    total[i] = r.grads.leaf_grads[i];
                else {
                    double* d = total[i].mutable_data();
                    const double* s = r.grads.leaf_grads[i].data();
                    for (long j = 0; j < total[i].size(); ++j) d[j] += s[j];
                }
            }
        }
        const double inv = 1.0 / static_cast<double>(filled);
        for (Tensor& g : total) {
            double* d = g.mutable_data();
            for (long j = 0; j < g.size(); ++j) d[j] *= inv;
        }
        out.grads.agent.assign(total.begin(), total.begin() + n_agent);
        out.grads.mixer.assign(total.begin() + n_agent, total.begin() + n_agent + n_mixer);
        out.grads.aux_mixer.assign(total.begin() + n_agent + n_mixer, total.end());
    }
    return out;
}

TrainStepStats train_step(Learner& learner, const ReplayBuffer& buffer,
                          const env::EnvConfig& ecfg, std::mt19937_64& rng) {
    if (buffer.size() < static_cast<size_t>(learner.cfg.batch_episodes))
        throw InsufficientData("train_step: need " +
                               std::to_string(learner.cfg.batch_episodes) + " episodes");
    EpisodeBatch batch =
        materialize(buffer.sample(learner.cfg.batch_episodes, rng), ecfg);
    LossOutput lo = compute_losses(batch, learner, /*with_grads=*/true);

    std::vector<Tensor> grads;
    grads.reserve(lo.grads.agent.size() + lo.grads.mixer.size() + lo.grads.aux_mixer.size());
    for (auto& g : lo.grads.agent) grads.push_back(std::move(g));
    for (auto& g : lo.grads.mixer) grads.push_back(std::move(g));
    for (auto& g : lo.grads.aux_mixer) grads.push_back(std::move(g));

    TrainStepStats stats;
    stats.loss_td = lo.td;
    stats.loss_aux = lo.aux;
    stats.loss_total = lo.total;
    stats.grad_norm = global_norm(grads);
    clip_gradients(grads, learner.cfg.grad_clip);

    std::vector<Tensor*> params = learner.online_params();
    if (learner.cfg.optimizer == OptimizerKind::Adam)
        adam_step(params, grads, learner.adam, learner.cfg.lr);
    else
        rmsprop_step(params, grads, learner.rms, learner.cfg.lr, learner.cfg.smoothing);

    learner.train_steps += 1;
    stats.synced = learner.maybe_sync();
    return stats;
}

namespace {

struct RolloutStats {
    bool win = false;
    double ret = 0.0;
    double support_sum = 0.0;
    double visible_sum = 0.0;
    long agent_steps = 0;
};

// Greedy rollout; when `track_support` the sparse head runs for diagnostics.
RolloutStats greedy_rollout(const env::EnvConfig& ecfg, const Learner& learner,
                            std::mt19937_64& rng, bool track_support) {
    env::WorldState s = env::reset(ecfg, rng);
    const int n = ecfg.allies;
    const int m = env::n_entities(ecfg);
    const int feat = env::entity_feat(ecfg);
    const int na = env::n_actions(ecfg);
    const long row_len = static_cast<long>(m) * feat;
    HeadSelect hs{learner.acts_with_dense(), !learner.acts_with_dense() || track_support};
    Tensor h = Tensor::zeros(Shape::of(n, learner.agent.hidden_dim()));
    RolloutStats st;

    while (!s.terminal) {
        Tensor obs(Shape::of(n, m, feat));
        Tensor alive(Shape::of(n, m));
        std::vector<std::vector<uint8_t>> masks(n);
        std::vector<uint8_t> self_alive(n, 0);
        {
            double* od = obs.mutable_data();
            double* ad = alive.mutable_data();
            for (int a = 0; a < n; ++a) {
                EntitySet es = env::observe(s, a, ecfg);
                std::memcpy(od + a * row_len, es.entities.data(), sizeof(double) * row_len);
                for (int j = 0; j < m; ++j) ad[static_cast<long>(a) * m + j] = es.alive[j];
                masks[a] = env::avail_actions(s, a, ecfg);
                self_alive[a] = es.alive[0];
            }
        }
        AgentForward fwd = agent_forward(obs, alive, h, learner.agent, hs);
        h = fwd.h_next;
        const Tensor& q = learner.acts_with_dense() ? fwd.q_dense : fwd.q_sparse;

        if (track_support) {
            const double* w = fwd.sparse_weights.data();
            const double* av = alive.data();
            for (int a = 0; a < n; ++a) {
                if (!self_alive[a]) continue;
                int support = 0, visible = 0;
                for (int j = 0; j < m; ++j) {
                    if (w[(static_cast<long>(a) * m + 0) * m + j] > 0.0) ++support;
                    if (av[static_cast<long>(a) * m + j] != 0.0) ++visible;
                }
                st.support_sum += support;
                st.visible_sum += visible;
                st.agent_steps += 1;
            }
        }

        std::vector<int> actions(n);
        for (int a = 0; a < n; ++a) {
            std::vector<double> qa(q.data() + static_cast<long>(a) * na,
                                   q.data() + static_cast<long>(a + 1) * na);
            actions[a] = argmax_available(qa, masks[a]);
        }
        env::StepInfo info = env::step(s, actions, ecfg);
        st.ret += info.reward;
    }
    st.win = s.win;
    return st;
}

}  // namespace

EvalStats evaluate(const env::EnvConfig& ecfg, const Learner& learner, int episodes,
                   std::mt19937_64& rng) {
    EvalStats ev;
    double support = 0.0, visible = 0.0;
    long agent_steps = 0;
    for (int i = 0; i < episodes; ++i) {
        RolloutStats st = greedy_rollout(ecfg, learner, rng, /*track_support=*/true);
        ev.win_rate += st.win ? 1.0 : 0.0;
        ev.return_mean += st.ret;
        support += st.support_sum;
        visible += st.visible_sum;
        agent_steps += st.agent_steps;
    }
    ev.win_rate /= episodes;
    ev.return_mean /= episodes;
    if (agent_steps > 0) {
        ev.mean_sparse_support = support / agent_steps;
        ev.mean_visible = visible / agent_steps;
    }
    return ev;
}

EvalStats evaluate_random(const env::EnvConfig& ecfg, int episodes, std::mt19937_64& rng) {
    EvalStats ev;
    for (int i = 0; i < episodes; ++i) {
        env::WorldState s = env::reset(ecfg, rng);
        double ret = 0.0;
        while (!s.terminal) {
            std::vector<int> actions(ecfg.allies);
            for (int a = 0; a < ecfg.allies; ++a) {
                const auto mask = env::avail_actions(s, a, ecfg);
                std::vector<int> options;
                for (size_t u = 0; u < mask.size(); ++u)
                    if (mask[u]) options.push_back(static_cast<int>(u));
                std::uniform_int_distribution<size_t> pick(0, options.size() - 1);
                actions[a] = options[pick(rng)];
            }
            ret += env::step(s, actions, ecfg).reward;
        }
        ev.win_rate += s.win ? 1.0 : 0.0;
        ev.return_mean += ret;
    }
    ev.win_rate /= episodes;
    ev.return_mean /= episodes;
    return ev;
}

TrainResult train(const RunConfig& cfg, uint64_t seed, bool quiet) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed_ms = [&t0] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };

    std::mt19937_64 rng(seed);
    Learner L = Learner::init(learner_config(cfg), cfg.env, rng);
    ReplayBuffer buffer(cfg.buffer_capacity);
    TrainResult res;

    double acc_td = 0.0, acc_aux = 0.0, acc_tot = 0.0;
    long acc_n = 0;
    double ret_acc = 0.0;
    long ret_n = 0;

    auto push_eval_row = [&](long episode) {
        std::mt19937_64 erng(rng());
        EvalStats ev = evaluate(cfg.env, L, cfg.eval_episodes, erng);
        MetricsRow row;
        row.episode = episode;
        row.env_steps = L.env_steps;
        row.epsilon = epsilon_at(L.env_steps, cfg.epsilon);
        row.loss_td = acc_n ? acc_td / acc_n : 0.0;
        row.loss_aux = acc_n ? acc_aux / acc_n : 0.0;
        row.loss_total = acc_n ? acc_tot / acc_n : 0.0;
        row.train_return_mean = ret_n ? ret_acc / ret_n : 0.0;
        row.test_win_rate = ev.win_rate;
        row.test_return_mean = ev.return_mean;
        row.mean_sparse_support = ev.mean_sparse_support;
        row.wall_ms = elapsed_ms();
        res.rows.push_back(row);
        res.best_win_rate = std::max(res.best_win_rate, ev.win_rate);
        res.final_win_rate = ev.win_rate;
        res.final_mean_sparse_support = ev.mean_sparse_support;
        res.final_mean_visible = ev.mean_visible;
        acc_td = acc_aux = acc_tot = 0.0;
        acc_n = 0;
        ret_acc = 0.0;
        ret_n = 0;
        if (!quiet)
            std::cout << "[seed " << seed << "] ep " << episode << " steps " << L.env_steps
                      << " eps " << format_g9(row.epsilon) << " win "
                      << format_g9(ev.win_rate) << " loss " << format_g9(row.loss_total)
                      << std::endl;
    };

    push_eval_row(0);
    while (L.env_steps < cfg.total_env_steps) {
        const double eps = epsilon_at(L.env_steps, cfg.epsilon);
        Episode ep = collect_episode(cfg.env, L, eps, rng);
        L.env_steps += ep.length();
        L.episodes += 1;
        ret_acc += ep.total_return();
        ret_n += 1;
        buffer.push(std::move(ep));

        if (buffer.size() >= static_cast<size_t>(cfg.batch_episodes)) {
            TrainStepStats st = train_step(L, buffer, cfg.env, rng);
            acc_td += st.loss_td;
            acc_aux += st.loss_aux;
            acc_tot += st.loss_total;
            acc_n += 1;
        } else {
            L.maybe_sync();
        }
        if (L.episodes % cfg.eval_interval_episodes == 0) push_eval_row(L.episodes);
    }
    if (res.rows.empty() || res.rows.back().episode != L.episodes) push_eval_row(L.episodes);

    res.episodes = L.episodes;
    res.env_steps = L.env_steps;
    res.wall_ms = elapsed_ms();
    res.learner = std::move(L);
    return res;
}

}  // namespace marl
