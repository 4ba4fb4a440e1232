#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tenvoo/autodiff.hpp"
#include "tenvoo/optim.hpp"
#include "tenvoo/rng.hpp"

using namespace tenvoo;

TEST_SUITE("autodiff") {

TEST_CASE("contract gradients match central differences") {
    Rng rng(11);
    ParamStore ps;
    Parameter& a = ps.add("A", Tensor::random_normal({2, 3, 4}, rng));
    Parameter& b = ps.add("B", Tensor::random_normal({4, 3, 5}, rng));
    Tensor target = Tensor::random_normal({2, 5}, rng);
    Graph g;
    int c = g.contract(g.leaf(a), g.leaf(b), {{1, 1}, {2, 0}});
    int loss = g.mse(c, g.leaf(target));
    CHECK(finite_diff_check(g, loss, a, 1e-6).max_rel_err < 1e-6);
    CHECK(finite_diff_check(g, loss, b, 1e-6).max_rel_err < 1e-6);

    SUBCASE("full contraction to a scalar") {
        Graph g2;
        int x = g2.contract(g2.leaf(a), g2.leaf(Tensor::random_normal({4, 3, 2}, rng)),
                            {{0, 2}, {1, 1}, {2, 0}});
        int l2 = g2.sum_all(g2.mul(x, x));
        CHECK(finite_diff_check(g2, l2, a, 1e-6).max_rel_err < 1e-6);
    }
}

TEST_CASE("conv3d gradients match central differences") {
    Rng rng(17);
    ParamStore ps;
    Parameter& w = ps.add("W", Tensor::random_normal({3, 2, 3, 3, 3}, rng));
    Parameter& b = ps.add("B", Tensor::random_normal({3}, rng));
    Parameter& x = ps.add("X", Tensor::random_normal({2, 2, 5, 6, 7}, rng));

    SUBCASE("stride 2, pad 1") {
        Graph g;
        int y = g.conv3d(g.leaf(x), g.leaf(w), g.leaf(b), {2, 2, 2}, {1, 1, 1});
        int loss = g.mse(y, g.leaf(Tensor::random_normal(g.value(y).shape, rng)));
        CHECK(finite_diff_check(g, loss, w, 1e-6).max_rel_err < 1e-5);
        CHECK(finite_diff_check(g, loss, b, 1e-6).max_rel_err < 1e-5);
        // Input entries can have near-zero gradients, which inflates the
        // relative error of central differences; allow the usual FD slack.
        CHECK(finite_diff_check(g, loss, x, 1e-6, 40).max_rel_err < 1e-4);
    }
    SUBCASE("stride 1, pad 1") {
        Graph g;
        int y = g.conv3d(g.leaf(x), g.leaf(w), g.leaf(b), {1, 1, 1}, {1, 1, 1});
        int loss = g.mse(y, g.leaf(Tensor::random_normal(g.value(y).shape, rng)));
        CHECK(finite_diff_check(g, loss, w, 1e-6).max_rel_err < 1e-5);
        CHECK(finite_diff_check(g, loss, x, 1e-6, 40).max_rel_err < 1e-4);
    }
}

TEST_CASE("group_norm gradients match central differences") {
    Rng rng(23);
    ParamStore ps;
    Parameter& x = ps.add("X", Tensor::random_normal({2, 6, 3, 2, 2}, rng));
    Parameter& ga = ps.add("gamma", Tensor::random_normal({6}, rng));
    Parameter& be = ps.add("beta", Tensor::random_normal({6}, rng));
    Graph g;
    int y = g.group_norm(g.leaf(x), g.leaf(ga), g.leaf(be), 3, 1e-5);
    int loss = g.mse(y, g.leaf(Tensor::random_normal(g.value(y).shape, rng)));
    CHECK(finite_diff_check(g, loss, x, 1e-6).max_rel_err < 1e-5);
    CHECK(finite_diff_check(g, loss, ga, 1e-6).max_rel_err < 1e-5);
    CHECK(finite_diff_check(g, loss, be, 1e-6).max_rel_err < 1e-5);
}

TEST_CASE("mixed shape-op chain gradients match central differences") {
    // add_channel_bias -> upsample2x -> concat -> reshape -> permute ->
    // batched_matmul -> linear -> softmax -> silu
    Rng rng(29);
    ParamStore ps;
    Parameter& wq = ps.add("Wq", Tensor::random_normal({4, 4}, rng, 0.5));
    Parameter& bq = ps.add("bq", Tensor::random_normal({4}, rng, 0.5));
    Parameter& v = ps.add("V", Tensor::random_normal({1, 3}, rng, 0.5));
    Tensor x = Tensor::random_normal({1, 3, 2, 2, 2}, rng);
    Graph g;
    int xb = g.add_channel_bias(g.leaf(x), g.leaf(v));
    int up = g.upsample2x(xb);            // [1,3,4,4,4]
    int cat = g.concat_channels(up, up);  // [1,6,4,4,4]
    int pm = g.permute(g.reshape(cat, {1, 6, 64}), {0, 2, 1});
    int proj = g.batched_matmul(pm, g.leaf(Tensor::random_normal({1, 6, 4}, rng, 0.3)));
    int q = g.linear(proj, g.leaf(wq), g.leaf(bq));
    int si = g.silu(g.softmax_last(q));
    int loss = g.mean_all(g.mul(si, si));
    CHECK(finite_diff_check(g, loss, wq, 1e-6).max_rel_err < 1e-5);
    CHECK(finite_diff_check(g, loss, bq, 1e-6).max_rel_err < 1e-5);
    CHECK(finite_diff_check(g, loss, v, 1e-6).max_rel_err < 1e-5);
}

TEST_CASE("randomized linear/softmax/matmul stacks pass FD over 50 seeds") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed * 6151 + 1);
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(2));
        const std::int64_t m = 2 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t k = 2 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t o = 2 + static_cast<std::int64_t>(rng.below(3));
        ParamStore ps;
        Parameter& a = ps.add("A", Tensor::random_normal({n, m, k}, rng, 0.7));
        Parameter& w = ps.add("W", Tensor::random_normal({o, k}, rng, 0.7));
        Parameter& b = ps.add("b", Tensor::random_normal({o}, rng, 0.7));
        Graph g;
        // silu before softmax keeps the bias out of softmax's shift-invariant
        // direction, so its true gradient never vanishes identically
        int h = g.silu(g.linear(g.leaf(a), g.leaf(w), g.leaf(b)));
        if (rng.below(2) == 0) h = g.softmax_last(h);
        h = g.batched_matmul(g.leaf(Tensor::random_normal({n, 2, m}, rng, 0.7)), h);
        int loss = g.mse(h, g.leaf(Tensor::random_normal(g.value(h).shape, rng)));
        if (rng.below(2) == 0) loss = g.scale(g.sub(loss, g.leaf(Tensor::scalar(0.25))), 1.75);
        CHECK(finite_diff_check(g, loss, a, 1e-6).max_rel_err < 1e-4);
        CHECK(finite_diff_check(g, loss, w, 1e-6).max_rel_err < 1e-4);
        CHECK(finite_diff_check(g, loss, b, 1e-6).max_rel_err < 1e-4);
    }
}

TEST_CASE("backward reports trainable leaves only; sum grads are ones") {
    Rng rng(37);
    ParamStore ps;
    Parameter& a = ps.add("A", Tensor::random_normal({3}, rng));
    Parameter& f = ps.add("F", Tensor::random_normal({3}, rng), false);
    Graph g;
    int s = g.sum_all(g.add(g.leaf(a), g.leaf(f)));
    auto grads = g.backward(s);
    REQUIRE(grads.count("A") == 1);
    CHECK(grads.count("F") == 0);
    for (double v : grads.at("A").data) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("recompute re-reads parameter values in tape order") {
    ParamStore ps;
    Parameter& a = ps.add("A", Tensor({2}, {1.0, 2.0}));
    Graph g;
    int y = g.scale(g.leaf(a), 3.0);
    CHECK(g.value(y).data == (std::vector<double>{3.0, 6.0}));
    a.value.data = {10.0, 20.0};
    g.recompute();
    CHECK(g.value(y).data == (std::vector<double>{30.0, 60.0}));
}

TEST_CASE("sgd and adam updates match closed forms") {
    SUBCASE("sgd") {
        ParamStore ps;
        Parameter& p = ps.add("p", Tensor({2}, {1.0, -2.0}));
        std::map<std::string, Tensor> grads;
        grads.emplace("p", Tensor({2}, {0.5, 4.0}));
        sgd_step(ps, grads, 0.1);
        CHECK(p.value.data[0] == doctest::Approx(0.95).epsilon(1e-15));
        CHECK(p.value.data[1] == doctest::Approx(-2.4).epsilon(1e-15));
    }
    SUBCASE("adam with constant unit gradient") {
        // bias correction makes every step identical: lr * 1 / (1 + eps)
        ParamStore ps;
        Parameter& p = ps.add("p", Tensor::scalar(1.0));
        AdamOptimizer opt(0.001);
        std::map<std::string, Tensor> grads;
        grads.emplace("p", Tensor::scalar(1.0));
        opt.step(ps, grads);
        const double step1 = 0.001 / (1.0 + 1e-8);
        CHECK(std::abs(p.value.data[0] - (1.0 - step1)) < 1e-15);
        opt.step(ps, grads);
        CHECK(std::abs(p.value.data[0] - (1.0 - 2.0 * step1)) < 1e-12);
        CHECK(opt.t() == 2);
    }
    SUBCASE("clip_grad_norm rescales only above the threshold") {
        std::map<std::string, Tensor> grads;
        grads.emplace("a", Tensor({2}, {3.0, 4.0}));  // norm 5
        clip_grad_norm(grads, 10.0);
        CHECK(grads.at("a").data == (std::vector<double>{3.0, 4.0}));
        clip_grad_norm(grads, 2.5);
        CHECK(grad_global_norm(grads) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(grads.at("a").data[0] == doctest::Approx(1.5).epsilon(1e-12));
    }
}

}  // TEST_SUITE("autodiff")
