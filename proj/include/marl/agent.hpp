#pragma once

#include <random>
#include <vector>

#include "marl/attention.hpp"
#include "marl/tensor.hpp"

namespace marl {

inline constexpr int kEmbedDim = 32;
inline constexpr int kHiddenDim = 64;

// Full utility-network parameter set. One head serves both attention paths;
// under parameter sharing every agent references one copy of this.
struct AgentParams {
    AttentionParams attention;
    GruParams gru;
    Tensor head_w;  // [d_X + d_H, n_actions]
    Tensor head_b;  // [n_actions]

    static AgentParams init(int entity_feat, int n_actions, std::mt19937_64& rng,
                            int embed_dim = kEmbedDim, int hidden_dim = kHiddenDim);

    int embed_dim() const { return attention.embed_dim(); }
    int hidden_dim() const { return gru.ur.shape().d[0]; }
    int n_actions() const { return head_b.shape().d[0]; }

    template <typename F>
    void visit(F&& f) {
        f("attention.embed_w", attention.embed_w);
        f("attention.embed_b", attention.embed_b);
        f("attention.wq", attention.wq);
        f("attention.wk", attention.wk);
        f("attention.wv", attention.wv);
        f("gru.wr", gru.wr);
        f("gru.wu", gru.wu);
        f("gru.wh", gru.wh);
        f("gru.ur", gru.ur);
        f("gru.uu", gru.uu);
        f("gru.uh", gru.uh);
        f("gru.br", gru.br);
        f("gru.bu", gru.bu);
        f("gru.bh", gru.bh);
        f("head_w", head_w);
        f("head_b", head_b);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<AgentParams*>(this)->visit(
            [&f](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }
};

struct AgentStep {
    std::vector<double> q_dense;
    std::vector<double> q_sparse;
    Tensor h_next;          // [d_H]
    Tensor dense_weights;   // [M, M]
    Tensor sparse_weights;  // [M, M]
};

AgentStep agent_step(const EntitySet& obs, const Tensor& h_prev, const AgentParams& p);

struct HeadSelect {
    bool dense = true;
    bool sparse = true;
};

// Batched forward over B stacked observations for one timestep.
struct AgentForward {
    Tensor q_dense;         // [B, n_actions]
    Tensor q_sparse;        // [B, n_actions]
    Tensor h_next;          // [B, d_H]
    Tensor dense_weights;   // [B, M, M]
    Tensor sparse_weights;  // [B, M, M]
};
AgentForward agent_forward(const Tensor& obs /*[B,M,d_E]*/, const Tensor& alive /*[B,M]*/,
                           const Tensor& h_prev /*[B,d_H]*/, const AgentParams& p,
                           HeadSelect heads = {});

struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.05;
    long anneal_steps = 50000;
};
double epsilon_at(long step, const EpsilonSchedule& s);

// Greedy over available actions, ties to the lowest index.
int argmax_available(const std::vector<double>& q, const std::vector<uint8_t>& avail);
int select_action(const std::vector<double>& q, const std::vector<uint8_t>& avail, double epsilon,
                  std::mt19937_64& rng);

}  // namespace marl
