#include <cmath>
#include <vector>

#include "doctest.h"
#include "msrlab/gradcheck.hpp"
#include "msrlab/params.hpp"
#include "msrlab/rng.hpp"
#include "msrlab/tensor.hpp"

using namespace msr;

namespace {

ParamStore random_store(const std::vector<std::pair<std::string, Shape>>& specs, uint64_t seed,
                        double lo = -0.8, double hi = 0.8) {
    ParamStore ps;
    Rng rng(seed);
    for (const auto& [name, shape] : specs) {
        std::vector<double> v(numel(shape));
        for (double& x : v) x = rng.uniform(lo, hi);
        ps.add(name, shape, std::move(v));
    }
    return ps;
}

}  // namespace

TEST_CASE("matmul forward hand values") {
    Graph g;
    int a = g.constant({2, 2}, {1, 2, 3, 4});
    int b = g.constant({2, 1}, {1, 1});
    int c = g.matmul(a, b);
    CHECK(g.value(c) == std::vector<double>{3, 7});
}

TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    int a = g.constant({2}, {0, 0});
    int s = g.softmax(a);
    CHECK(g.value(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.value(s)[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("sigmoid at zero") {
    Graph g;
    int s = g.sigmoid(g.constant_scalar(0.0));
    CHECK(g.value(s)[0] == 0.5);
}

TEST_CASE("softmax rows sum to one and stay in (0,1)") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        std::vector<double> v(24);
        for (double& x : v) x = rng.uniform(-14, 14);
        int s = g.softmax(g.constant({4, 6}, v));
        const auto& out = g.value(s);
        for (int i = 0; i < 4; ++i) {
            double row = 0;
            for (int j = 0; j < 6; ++j) {
                double p = out[i * 6 + j];
                CHECK(p > 0.0);
                CHECK(p < 1.0);
                row += p;
            }
            CHECK(std::fabs(row - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("reshape round-trip is bitwise identity") {
    Rng rng(3);
    std::vector<double> v(12);
    for (double& x : v) x = rng.normal();
    Graph g;
    int a = g.constant({3, 4}, v);
    int b = g.reshape(a, {6, 2});
    int c = g.reshape(b, {3, 4});
    CHECK(g.value(c) == v);
}

TEST_CASE("concat lays out rows and columns as expected") {
    Graph g;
    int a = g.constant({2, 2}, {1, 2, 3, 4});
    int b = g.constant({2, 1}, {5, 6});
    int c = g.concat({a, b}, 1);
    CHECK(g.value(c) == std::vector<double>{1, 2, 5, 3, 4, 6});
    int r = g.concat({a, a}, 0);
    CHECK(g.shape(r) == Shape{4, 2});
    CHECK(g.value(r) == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
    CHECK_THROWS_AS(g.concat({a, b}, 0), GraphError);
}

TEST_CASE("shape errors name the op and shapes") {
    Graph g;
    int a = g.constant({2, 3}, std::vector<double>(6, 0.0));
    int b = g.constant({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), GraphError);
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2,3]"), GraphError);
    CHECK_THROWS_AS(g.row_sqdist(a, g.constant({2, 2}, std::vector<double>(4, 0.0))), GraphError);
}

TEST_CASE("backward of sum is all ones") {
    ParamStore ps;
    ps.add("p", {3}, {1.0, -2.0, 0.5});
    Graph g(&ps);
    int loss = g.sum(g.parameter("p"));
    GradientMap grads(ps);
    g.backward(loss, grads);
    CHECK(grads.at("p") == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of sigmoid at zero is a quarter") {
    ParamStore ps;
    ps.add("w", {1}, {0.0});
    Graph g(&ps);
    int loss = g.sigmoid(g.parameter("w"));
    GradientMap grads(ps);
    g.backward(loss, grads);
    CHECK(grads.at("w")[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward of rowwise squared distance") {
    ParamStore ps;
    ps.add("e", {1, 2}, {1.0, 0.0});
    Graph g(&ps);
    int u = g.constant({1, 2}, {0.0, 0.0});
    int d = g.row_sqdist(g.parameter("e"), u);
    CHECK(g.value(d)[0] == 1.0);
    int loss = g.sum(d);
    GradientMap grads(ps);
    g.backward(loss, grads);
    CHECK(grads.at("e") == std::vector<double>{2, 0});
}

TEST_CASE("non-scalar loss is rejected") {
    ParamStore ps;
    ps.add("p", {2}, {1.0, 2.0});
    Graph g(&ps);
    int a = g.parameter("p");
    GradientMap grads(ps);
    CHECK_THROWS_AS(g.backward(a, grads), GraphError);
}

TEST_CASE("gradients accumulate over multiple paths") {
    ParamStore ps;
    ps.add("x", {1}, {3.0});
    Graph g(&ps);
    int x = g.parameter("x");
    int y = g.mul(x, x);  // x^2, d/dx = 2x
    int loss = g.sum(y);
    GradientMap grads(ps);
    g.backward(loss, grads);
    CHECK(grads.at("x")[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("forward and backward are bit-reproducible") {
    auto run = [](std::vector<double>* grad_out) {
        ParamStore ps = random_store({{"w", {4, 3}}, {"b", {3}}}, 99);
        Graph g(&ps);
        int x = g.constant({2, 4}, {0.3, -1.2, 0.8, 2.0, -0.4, 0.9, 1.5, -0.7});
        int h = g.relu(g.add(g.matmul(x, g.parameter("w")), g.parameter("b")));
        int loss = g.mean(g.sigmoid(h));
        GradientMap grads(ps);
        g.backward(loss, grads);
        *grad_out = grads.at("w");
        return g.scalar_value(loss);
    };
    std::vector<double> g1, g2;
    double l1 = run(&g1);
    double l2 = run(&g2);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("finite differences: linear model is exact") {
    ParamStore ps = random_store({{"w", {5, 1}}}, 11);
    auto build = [](Graph& g) {
        int x = g.constant({1, 5}, {0.5, -1.0, 2.0, 0.25, -0.75});
        return g.sum(g.matmul(x, g.parameter("w")));
    };
    FdReport r = finite_difference_check(build, ps, 1e-5, 1);
    CHECK(r.max_rel_err < 1e-9);
}

TEST_CASE("finite differences across the whole op set") {
    // one graph touching every differentiable op, inputs kept away from
    // relu/abs kinks
    ParamStore ps = random_store({{"w1", {6, 4}},
                                  {"b1", {4}},
                                  {"emb", {5, 3}},
                                  {"anchor", {4, 3}},
                                  {"alpha", {1, 1}},
                                  {"q", {3, 4}}},
                                 21);
    auto build = [](Graph& g) {
        int x = g.constant({2, 6}, {0.31, -0.62, 0.85, 0.44, -0.23, 0.97,
                                    -0.51, 0.72, -0.35, 0.63, 0.27, -0.88});
        int h = g.relu(g.add(g.matmul(x, g.parameter("w1")), g.parameter("b1")));  // [2,4]
        int hs = g.sigmoid(h);
        int ht = g.matmul(hs, g.transpose(g.parameter("q")));               // [2,3]
        // gather + sqdist + exp/abs/neg chain
        int e = g.gather_rows(g.parameter("emb"), {0, 3});                   // [2,3]
        int u = g.gather_rows(g.parameter("anchor"), {1, 2});                // [2,3]
        int d1 = g.row_sqdist(e, u);                                         // [2]
        int d2 = g.row_sqdist(e, ht);                                        // [2]
        int w = g.exp(g.neg(g.abs(g.add(d1, g.neg(d2)))));                   // [2]
        int wm = g.mul(g.reshape(w, {2, 1}), g.parameter("alpha"));          // scalar broadcast
        // attention pair over e as two grouped rows per query row
        int stack = g.reshape(g.concat({e, u}, 1), {4, 3});                  // [4,3] groups of 2
        int scores = g.scalar_mul(g.attn_scores(e, stack, 2), 1.0 / std::sqrt(3.0));
        int aw = g.softmax(scores);                                          // [2,2]
        int mixed = g.attn_mix(aw, stack, 2);                                // [2,3]
        int parts = g.concat({mixed, wm}, 1);                                // [2,4]
        int probs = g.sigmoid(parts);
        int labels = g.constant({2, 4}, {1, 0, 1, 0, 0, 1, 0, 1});
        int loss = g.mean(g.bce(probs, labels));
        return g.add(loss, g.scalar_mul(g.mean(hs), 0.25));
    };
    FdReport r = finite_difference_check(build, ps, 1e-5, 5, 40);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("relu and abs subgradient at zero is zero") {
    ParamStore ps;
    ps.add("x", {2}, {0.0, 0.0});
    Graph g(&ps);
    int x = g.parameter("x");
    int loss = g.sum(g.add(g.relu(x), g.abs(x)));
    GradientMap grads(ps);
    g.backward(loss, grads);
    CHECK(grads.at("x") == std::vector<double>{0, 0});
}

TEST_CASE("bce forward matches hand values") {
    Graph g;
    int p = g.constant({2}, {0.5, 0.5});
    int y = g.constant({2}, {1.0, 0.0});
    int loss = g.mean(g.bce(p, y));
    CHECK(g.scalar_value(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("recompute tracks parameter mutation") {
    ParamStore ps;
    ps.add("w", {1}, {2.0});
    Graph g(&ps);
    int loss = g.mul(g.parameter("w"), g.parameter("w"));
    CHECK(g.value(loss)[0] == 4.0);
    ps.at("w").value[0] = 3.0;
    g.recompute();
    CHECK(g.value(loss)[0] == 9.0);
}
