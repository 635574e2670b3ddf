#include <cmath>
#include <random>

#include "doctest.h"
#include "marl/mixer.hpp"
#include "test_support.hpp"

using namespace marl;

namespace {

// Plain-loop re-evaluation of the monotonic mixer for one sample.
double reference_monotonic(const std::vector<double>& u, const Tensor& s,
                           const MixerParams& p) {
    const int n = p.n_agents, dm = p.mix_dim, sd = p.state_dim;
    auto affine = [&](const Tensor& w, const Tensor& b, int out_dim) {
        std::vector<double> r(out_dim);
        for (int j = 0; j < out_dim; ++j) {
            double acc = b.at(j);
            for (int i = 0; i < sd; ++i) acc += s.at(i) * w.at(i, j);
            r[j] = acc;
        }
        return r;
    };
    auto w1 = affine(p.w1_w, p.w1_b, n * dm);
    for (double& v : w1) v = std::fabs(v);
    auto b1 = affine(p.b1_w, p.b1_b, dm);
    auto w2 = affine(p.w2_w, p.w2_b, dm);
    for (double& v : w2) v = std::fabs(v);
    auto fb_h = affine(p.fb1_w, p.fb1_b, dm);
    for (double& v : fb_h) v = std::max(0.0, v);
    double fb = p.fb2_b.at(0);
    for (int j = 0; j < dm; ++j) fb += fb_h[j] * p.fb2_w.at(j, 0);

    double total = fb;
    for (int j = 0; j < dm; ++j) {
        double pre = b1[j];
        for (int a = 0; a < n; ++a) pre += u[a] * w1[a * dm + j];
        const double hidden = pre > 0.0 ? pre : std::expm1(pre);
        total += hidden * w2[j];
    }
    return total;
}

}  // namespace

TEST_CASE("additive mixer sums utilities") {
    MixerParams p = MixerParams::additive(3);
    Tensor state;
    CHECK(mix({1.0, 2.0, 3.0}, state, p) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("monotonic mixer with zeroed hypernetwork returns the final bias") {
    std::mt19937_64 rng(211);
    MixerParams p = MixerParams::monotonic(2, 4, rng, 3);
    p.visit([&](const char*, Tensor& t) { t = Tensor::zeros(t.shape()); });
    p.fb2_b = Tensor::vec({0.7});
    Tensor s = Tensor::uniform(Shape::of(4), -1, 1, rng);
    CHECK(mix({5.0, -3.0}, s, p) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("monotonic mixer matches the straight-line reference") {
    std::mt19937_64 rng(223);
    MixerParams p = MixerParams::monotonic(2, 5, rng, 2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor s = Tensor::uniform(Shape::of(5), -1, 1, rng);
        std::vector<double> u = {std::uniform_real_distribution<double>(-2, 2)(rng),
                                 std::uniform_real_distribution<double>(-2, 2)(rng)};
        CHECK(mix(u, s, p) == doctest::Approx(reference_monotonic(u, s, p)).epsilon(1e-12));
    }
}

TEST_CASE("monotonicity probes") {
    std::mt19937_64 rng(227);
    MixerParams add = MixerParams::additive(3);
    Tensor state;
    for (int i = 0; i < 3; ++i)
        CHECK(monotonicity_probe(add, state, {0.3, -0.4, 1.2}, i, 1e-4) == 1.0);

    MixerParams p = MixerParams::monotonic(3, 6, rng, 4);
    std::uniform_real_distribution<double> val(-2, 2);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor s = Tensor::uniform(Shape::of(6), -1, 1, rng);
        std::vector<double> u = {val(rng), val(rng), val(rng)};
        const int agent = trial % 3;
        CHECK(monotonicity_probe(p, s, u, agent, 1e-4) >= -1e-6);
    }

    // probe stability in delta
    Tensor s = Tensor::uniform(Shape::of(6), -1, 1, rng);
    std::vector<double> u = {0.4, -1.1, 0.9};
    const double a = monotonicity_probe(p, s, u, 1, 1e-4);
    const double b = monotonicity_probe(p, s, u, 1, 1e-5);
    CHECK(testsup::close_rel(a, b, 1e-2, 1e-9));
}

TEST_CASE("mixer gradients match finite differences") {
    std::mt19937_64 rng(229);
    MixerParams p = MixerParams::monotonic(2, 4, rng, 3);
    Tensor u = Tensor::uniform(Shape::of(3, 2), -1, 1, rng);
    Tensor s = Tensor::uniform(Shape::of(3, 4), -1, 1, rng);

    auto loss_value = [&] { return sum_all(mix_batch(u, s, p)).item(); };

    Tape tape;
    Tensor ul = tape.leaf(u);
    MixerParams leaf = p;
    leaf.visit([&](const char*, Tensor& t) { t = tape.leaf(t); });
    GradMap g = tape.backward(sum_all(mix_batch(ul, s, leaf)));

    const auto num_u = testsup::fd_grad(u, loss_value, 1e-5);
    for (long i = 0; i < u.size(); ++i)
        CHECK(testsup::close_rel(g.of(ul).data()[i], num_u[i], 1e-3, 1e-6));

    // spot-check two hypernetwork tensors
    const auto num_w1 = testsup::fd_grad(p.w1_w, loss_value, 1e-5);
    for (long i = 0; i < p.w1_w.size(); ++i)
        CHECK(testsup::close_rel(g.of(leaf.w1_w).data()[i], num_w1[i], 1e-3, 1e-6));
    const auto num_fb = testsup::fd_grad(p.fb1_w, loss_value, 1e-5);
    for (long i = 0; i < p.fb1_w.size(); ++i)
        CHECK(testsup::close_rel(g.of(leaf.fb1_w).data()[i], num_fb[i], 1e-3, 1e-6));

    // additive kind is differentiable too
    MixerParams add = MixerParams::additive(2);
    Tape t2;
    Tensor ul2 = t2.leaf(u);
    GradMap g2 = t2.backward(sum_all(mix_batch(ul2, s, add)));
    for (long i = 0; i < u.size(); ++i) CHECK(g2.of(ul2).data()[i] == 1.0);
}

TEST_CASE("both heads can share one mixer parameter set") {
    std::mt19937_64 rng(233);
    MixerParams p = MixerParams::monotonic(2, 4, rng, 3);
    Tensor s = Tensor::uniform(Shape::of(1, 4), -1, 1, rng);
    Tensor u_dense = Tensor::mat({{0.5, -0.2}});
    Tensor u_sparse = Tensor::mat({{0.1, 0.8}});
    // same parameters evaluated on each head's utilities
    const double qd = mix_batch(u_dense, s, p).item();
    const double qs = mix_batch(u_sparse, s, p).item();
    CHECK(qd != qs);
    p.fb2_b = Tensor::vec({p.fb2_b.at(0) + 1.0});
    CHECK(mix_batch(u_dense, s, p).item() == doctest::Approx(qd + 1.0).epsilon(1e-12));
    CHECK(mix_batch(u_sparse, s, p).item() == doctest::Approx(qs + 1.0).epsilon(1e-12));
}
