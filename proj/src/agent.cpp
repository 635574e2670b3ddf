#include "marl/agent.hpp"

#include <algorithm>
#include <cmath>

namespace marl {

AgentParams AgentParams::init(int entity_feat, int n_actions, std::mt19937_64& rng, int embed_dim,
                              int hidden_dim) {
    AgentParams p;
    p.attention = AttentionParams::init(entity_feat, embed_dim, rng);
    p.gru = GruParams::init(embed_dim, hidden_dim, rng);
    const int head_in = embed_dim + hidden_dim;
    const double bh = 1.0 / std::sqrt(static_cast<double>(head_in));
    p.head_w = Tensor::uniform(Shape::of(head_in, n_actions), -bh, bh, rng);
    p.head_b = Tensor::zeros(Shape::of(n_actions));
    return p;
}

AgentForward agent_forward(const Tensor& obs, const Tensor& alive, const Tensor& h_prev,
                           const AgentParams& p, HeadSelect heads) {
    if (obs.shape().rank != 3 || alive.shape().rank != 2 || h_prev.shape().rank != 2)
        throw ShapeMismatch("agent_forward: expected batched inputs");
    const int batch = obs.shape().d[0];
    if (alive.shape().d[0] != batch || h_prev.shape().d[0] != batch)
        throw ShapeMismatch("agent_forward: batch dims disagree");

    Tensor x = embed_entities(obs, p.attention);  // [B,M,d_X]
    Qkv qkv = project_qkv(x, p.attention);
    Tensor z = attention_logits(qkv.q, qkv.k);  // [B,M,M]

    AgentForward out;
    out.h_next = gru_cell(mean_rows(x), h_prev, p.gru);  // [B,d_H]

    auto head_q = [&](const Tensor& y) {
        Tensor feat = concat_last(mean_rows(y), out.h_next);  // [B, d_X+d_H]
        return add_bias(matmul(feat, p.head_w), p.head_b);
    };
    if (heads.dense) {
        Tensor w = softmax_rows(mask_keys(z, alive, MaskMode::NegInf));
        out.dense_weights = w;
        out.q_dense = head_q(matmul(w, qkv.v));
    }
    if (heads.sparse) {
        Tensor w = sparsemax_rows(mask_keys(z, alive, MaskMode::RowMinShift));
        out.sparse_weights = w;
        out.q_sparse = head_q(matmul(w, qkv.v));
    }
    if (!out.q_dense.empty() && !out.q_dense.all_finite())
        throw NonFinite("agent_forward: non-finite q_dense");
    if (!out.q_sparse.empty() && !out.q_sparse.all_finite())
        throw NonFinite("agent_forward: non-finite q_sparse");
    return out;
}

AgentStep agent_step(const EntitySet& obs, const Tensor& h_prev, const AgentParams& p) {
    const int m = obs.rows();
    const int feat = obs.feat();
    if (h_prev.shape().rank != 1 || h_prev.shape().d[0] != p.hidden_dim())
        throw ShapeMismatch("agent_step: h_prev " + h_prev.shape().str());

    Tensor obs3 = reshape(obs.entities, Shape::of(1, m, feat));
    Tensor alive2 = reshape(obs.alive_tensor(), Shape::of(1, m));
    Tensor h2 = reshape(h_prev, Shape::of(1, p.hidden_dim()));
    AgentForward fwd = agent_forward(obs3, alive2, h2, p);

    AgentStep step;
    const int na = p.n_actions();
    step.q_dense.assign(fwd.q_dense.data(), fwd.q_dense.data() + na);
    step.q_sparse.assign(fwd.q_sparse.data(), fwd.q_sparse.data() + na);
    step.h_next = reshape(fwd.h_next, Shape::of(p.hidden_dim()));
    step.dense_weights = reshape(fwd.dense_weights, Shape::of(m, m));
    step.sparse_weights = reshape(fwd.sparse_weights, Shape::of(m, m));
    return step;
}

double epsilon_at(long step, const EpsilonSchedule& s) {
    if (step < 0) throw Error("epsilon_at: negative step");
    if (s.anneal_steps <= 0 || step >= s.anneal_steps) return s.end;
    const double frac = static_cast<double>(step) / static_cast<double>(s.anneal_steps);
    return s.start + (s.end - s.start) * frac;
}

int argmax_available(const std::vector<double>& q, const std::vector<uint8_t>& avail) {
    int best = -1;
    for (size_t i = 0; i < q.size(); ++i) {
        if (i < avail.size() && !avail[i]) continue;
        if (best < 0 || q[i] > q[best]) best = static_cast<int>(i);
    }
    if (best < 0) throw NoAvailableAction("argmax_available: empty mask");
    return best;
}

int select_action(const std::vector<double>& q, const std::vector<uint8_t>& avail, double epsilon,
                  std::mt19937_64& rng) {
    std::vector<int> options;
    options.reserve(q.size());
    for (size_t i = 0; i < q.size(); ++i)
        if (i >= avail.size() || avail[i]) options.push_back(static_cast<int>(i));
    if (options.empty()) throw NoAvailableAction("select_action: empty mask");

    if (epsilon > 0.0) {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng) < epsilon) {
            std::uniform_int_distribution<size_t> pick(0, options.size() - 1);
            return options[pick(rng)];
        }
    }
    return argmax_available(q, avail);
}

}  // namespace marl
