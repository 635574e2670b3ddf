#pragma once

#include <random>
#include <vector>

#include "marl/tensor.hpp"

namespace marl {

inline constexpr int kMixDim = 32;

enum class MixerKind { Additive, Monotonic };

// Additive sums utilities (VDN). Monotonic generates mixing weights from the
// global state through a hypernetwork and takes their absolute value, which
// keeps dQtot/dQi >= 0.
struct MixerParams {
    MixerKind kind = MixerKind::Additive;
    int n_agents = 0;
    int state_dim = 0;
    int mix_dim = 0;

    Tensor w1_w, w1_b;    // state -> n_agents * mix_dim
    Tensor b1_w, b1_b;    // state -> mix_dim
    Tensor w2_w, w2_b;    // state -> mix_dim
    Tensor fb1_w, fb1_b;  // state -> mix_dim   (final-bias hidden layer, relu)
    Tensor fb2_w, fb2_b;  // mix_dim -> 1

    static MixerParams additive(int n_agents);
    static MixerParams monotonic(int n_agents, int state_dim, std::mt19937_64& rng,
                                 int mix_dim = kMixDim);

    template <typename F>
    void visit(F&& f) {
        if (kind != MixerKind::Monotonic) return;
        f("w1_w", w1_w);
        f("w1_b", w1_b);
        f("b1_w", b1_w);
        f("b1_b", b1_b);
        f("w2_w", w2_w);
        f("w2_b", w2_b);
        f("fb1_w", fb1_w);
        f("fb1_b", fb1_b);
        f("fb2_w", fb2_w);
        f("fb2_b", fb2_b);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<MixerParams*>(this)->visit(
            [&f](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }
};

// Batched joint value: utilities [E,N], states [E,S] -> [E]. Tape-aware.
Tensor mix_batch(const Tensor& utilities, const Tensor& states, const MixerParams& p);

double mix(const std::vector<double>& utilities, const Tensor& state, const MixerParams& p);

// Forward difference (mix(u + delta*e_i) - mix(u)) / delta.
double monotonicity_probe(const MixerParams& p, const Tensor& state,
                          const std::vector<double>& utilities, int agent_index, double delta);

}  // namespace marl
