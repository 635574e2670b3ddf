#include "marl/mixer.hpp"

#include <cmath>

namespace marl {

MixerParams MixerParams::additive(int n_agents) {
    MixerParams p;
    p.kind = MixerKind::Additive;
    p.n_agents = n_agents;
    return p;
}

MixerParams MixerParams::monotonic(int n_agents, int state_dim, std::mt19937_64& rng,
                                   int mix_dim) {
    const double bs = 1.0 / std::sqrt(static_cast<double>(state_dim));
    const double bm = 1.0 / std::sqrt(static_cast<double>(mix_dim));
    MixerParams p;
    p.kind = MixerKind::Monotonic;
    p.n_agents = n_agents;
    p.state_dim = state_dim;
    p.mix_dim = mix_dim;
    p.w1_w = Tensor::uniform(Shape::of(state_dim, n_agents * mix_dim), -bs, bs, rng);
    p.w1_b = Tensor::zeros(Shape::of(n_agents * mix_dim));
    p.b1_w = Tensor::uniform(Shape::of(state_dim, mix_dim), -bs, bs, rng);
    p.b1_b = Tensor::zeros(Shape::of(mix_dim));
    p.w2_w = Tensor::uniform(Shape::of(state_dim, mix_dim), -bs, bs, rng);
    p.w2_b = Tensor::zeros(Shape::of(mix_dim));
    p.fb1_w = Tensor::uniform(Shape::of(state_dim, mix_dim), -bs, bs, rng);
    p.fb1_b = Tensor::zeros(Shape::of(mix_dim));
    p.fb2_w = Tensor::uniform(Shape::of(mix_dim, 1), -bm, bm, rng);
    p.fb2_b = Tensor::zeros(Shape::of(1));
    return p;
}

Tensor mix_batch(const Tensor& utilities, const Tensor& states, const MixerParams& p) {
    if (utilities.shape().rank != 2 || utilities.shape().d[1] != p.n_agents)
        throw ShapeMismatch("mix_batch: utilities " + utilities.shape().str());
    const int e = utilities.shape().d[0];

    if (p.kind == MixerKind::Additive) {
        // row sums via [E,1,N] x [N,1]
        Tensor ones = Tensor::full(Shape::of(p.n_agents, 1), 1.0);
        Tensor tot = matmul(reshape(utilities, Shape::of(e, 1, p.n_agents)), ones);
        return reshape(tot, Shape::of(e));
    }

    if (states.shape().rank != 2 || states.shape().d[0] != e ||
        states.shape().d[1] != p.state_dim)
        throw ShapeMismatch("mix_batch: states " + states.shape().str());

    const int n = p.n_agents, dm = p.mix_dim;
    Tensor w1 = abs_act(add_bias(matmul(states, p.w1_w), p.w1_b));  // [E, N*dm]
    Tensor b1 = add_bias(matmul(states, p.b1_w), p.b1_b);           // [E, dm]
    Tensor w2 = abs_act(add_bias(matmul(states, p.w2_w), p.w2_b));  // [E, dm]
    Tensor fb = add_bias(matmul(relu(add_bias(matmul(states, p.fb1_w), p.fb1_b)), p.fb2_w),
                         p.fb2_b);  // [E, 1]

    Tensor u3 = reshape(utilities, Shape::of(e, 1, n));
    Tensor h = matmul(u3, reshape(w1, Shape::of(e, n, dm)));            // [E,1,dm]
    Tensor hidden = elu(add(reshape(h, Shape::of(e, dm)), b1));         // [E,dm]
    Tensor prod = matmul(reshape(hidden, Shape::of(e, 1, dm)),
                         reshape(w2, Shape::of(e, dm, 1)));             // [E,1,1]
    Tensor tot = add(reshape(prod, Shape::of(e)), reshape(fb, Shape::of(e)));
    return tot;
}

double mix(const std::vector<double>& utilities, const Tensor& state, const MixerParams& p) {
    if (static_cast<int>(utilities.size()) != p.n_agents)
        throw ShapeMismatch("mix: expected " + std::to_string(p.n_agents) + " utilities");
    Tensor u(Shape::of(1, p.n_agents));
    double* d = u.mutable_data();
    for (int i = 0; i < p.n_agents; ++i) d[i] = utilities[i];
    Tensor s;
    if (p.kind == MixerKind::Monotonic) {
        if (state.size() != p.state_dim) throw ShapeMismatch("mix: state width");
        s = reshape(state.detached(), Shape::of(1, p.state_dim));
    } else {
        s = Tensor(Shape::of(1, 1));
    }
    return mix_batch(u, s, p).item();
}

double monotonicity_probe(const MixerParams& p, const Tensor& state,
                          const std::vector<double>& utilities, int agent_index, double delta) {
    if (delta <= 0.0) throw Error("monotonicity_probe: delta must be positive");
    if (p.kind == MixerKind::Additive) {
        // mix(u + d e_i) - mix(u) telescopes to d exactly for a sum.
        return delta / delta;
    }
    std::vector<double> bumped = utilities;
    bumped[agent_index] += delta;
    return (mix(bumped, state, p) - mix(utilities, state, p)) / delta;
}

}  // namespace marl
