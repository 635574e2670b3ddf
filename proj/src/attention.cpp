#include "marl/attention.hpp"

#include <cmath>

namespace marl {

Tensor EntitySet::alive_tensor() const {
    Tensor t(Shape::of(rows()));
    double* d = t.mutable_data();
    for (int i = 0; i < rows(); ++i) d[i] = alive[i] ? 1.0 : 0.0;
    return t;
}

AttentionParams AttentionParams::init(int entity_feat, int embed_dim, std::mt19937_64& rng) {
    const double be = 1.0 / std::sqrt(static_cast<double>(entity_feat));
    const double bx = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    AttentionParams p;
    p.embed_w = Tensor::uniform(Shape::of(entity_feat, embed_dim), -be, be, rng);
    p.embed_b = Tensor::zeros(Shape::of(embed_dim));
    p.wq = Tensor::uniform(Shape::of(embed_dim, embed_dim), -bx, bx, rng);
    p.wk = Tensor::uniform(Shape::of(embed_dim, embed_dim), -bx, bx, rng);
    p.wv = Tensor::uniform(Shape::of(embed_dim, embed_dim), -bx, bx, rng);
    return p;
}

Tensor embed_entities(const Tensor& obs, const AttentionParams& p) {
    if (obs.shape().last() != p.entity_feat())
        throw ShapeMismatch("embed_entities: feature width " + obs.shape().str() +
                            " does not match params");
    return add_bias(matmul(obs, p.embed_w), p.embed_b);
}

Tensor embed_entities(const EntitySet& obs, const AttentionParams& p) {
    return embed_entities(obs.entities, p);
}

Qkv project_qkv(const Tensor& x, const AttentionParams& p) {
    if (x.shape().last() != p.embed_dim())
        throw ShapeMismatch("project_qkv: " + x.shape().str() + " does not match params");
    return Qkv{matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv)};
}

Tensor attention_logits(const Tensor& q, const Tensor& k) {
    const int d = q.shape().last();
    return scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(d)));
}

AttentionResult attend_dense(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& alive) {
    Tensor z = attention_logits(q, k);
    if (!alive.empty()) z = mask_keys(z, alive, MaskMode::NegInf);
    Tensor w = softmax_rows(z);
    return AttentionResult{matmul(w, v), w};
}

AttentionResult attend_sparse(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& alive) {
    Tensor z = attention_logits(q, k);
    if (!alive.empty()) z = mask_keys(z, alive, MaskMode::RowMinShift);
    Tensor w = sparsemax_rows(z);
    return AttentionResult{matmul(w, v), w};
}

}  // namespace marl
