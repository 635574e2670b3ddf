#pragma once

#include <cstdint>
#include <vector>

#include "marl/tensor.hpp"

namespace marl {

// One agent's observation: M entity feature rows. Row 0 is the self entity.
// Dead or out-of-sight entities are all-zero rows with alive=0.
struct EntitySet {
    Tensor entities;             // [M, d_E]
    std::vector<uint8_t> alive;  // M flags

    int rows() const { return entities.shape().d[0]; }
    int feat() const { return entities.shape().d[1]; }
    Tensor alive_tensor() const;
};

// Shared by the dense and sparse heads; exactly one copy per agent network.
struct AttentionParams {
    Tensor embed_w;      // [d_E, d_X]
    Tensor embed_b;      // [d_X]
    Tensor wq, wk, wv;   // [d_X, d_X]

    static AttentionParams init(int entity_feat, int embed_dim, std::mt19937_64& rng);
    int entity_feat() const { return embed_w.shape().d[0]; }
    int embed_dim() const { return embed_w.shape().d[1]; }
};

struct Qkv {
    Tensor q, k, v;  // each [M, d_X] (or [B, M, d_X])
};

struct AttentionResult {
    Tensor output;   // [M, d_X] (or [B, M, d_X])
    Tensor weights;  // [M, M]   (or [B, M, M]); row = query entity
};

// Affine embedding of entity rows; accepts [M,d_E] or [B,M,d_E].
Tensor embed_entities(const Tensor& obs, const AttentionParams& p);
Tensor embed_entities(const EntitySet& obs, const AttentionParams& p);

Qkv project_qkv(const Tensor& x, const AttentionParams& p);

// Z = Q K^T / sqrt(d_X); one logit matrix feeds both heads.
Tensor attention_logits(const Tensor& q, const Tensor& k);

// alive may be empty (all entities attended). Non-alive keys get weight 0.
AttentionResult attend_dense(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& alive = Tensor());
AttentionResult attend_sparse(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& alive = Tensor());

}  // namespace marl
