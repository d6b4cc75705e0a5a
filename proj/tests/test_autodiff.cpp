// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "gradcheck_common.hpp"
#include "metaseg/autodiff.hpp"

using namespace metaseg;
using msgtest::build_tiny_net;
using msgtest::make_primitive_cases;
using msgtest::max_rel_err;
using msgtest::random_tensor;

TEST_CASE("relu forward: negatives clamp to zero") {
    Graph g;
    int x = g.add_input("x", {1, 2, 2, 2});
    g.relu(x, "relu");
    ParamSet<double> none;
    Tensor<double> in({1, 2, 2, 2}, -1.0);
    auto out = forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::eval, 0);
    for (auto v : out.data) REQUIRE(v == 0.0);
}

TEST_CASE("conv3d forward: all-ones kernel counts overlap") {
    Graph g;
    int x = g.add_input("x", {1, 4, 4, 4});
    int w = g.add_param("w", {1, 1, 3, 3, 3});
    int b = g.add_param("b", {1});
    g.conv3d(x, w, b, 3, 1, "conv");
    ParamSet<double> p;
    p.add("w", Tensor<double>({1, 1, 3, 3, 3}, 1.0));
    p.add("b", Tensor<double>({1}, 0.0));
    Tensor<double> in({1, 4, 4, 4}, 1.0);
    auto out = forward<double>(g, p, std::span<const Tensor<double>>(&in, 1), Mode::eval, 0);
    REQUIRE(out.shape == Shape{1, 4, 4, 4});
    const auto at = [&](int64_t z, int64_t y, int64_t xx) { return out[(z * 4 + y) * 4 + xx]; };
    REQUIRE(at(0, 0, 0) == 8.0);   // corner: 2x2x2 kernel overlap
    REQUIRE(at(3, 3, 3) == 8.0);
    REQUIRE(at(1, 1, 1) == 27.0);  // interior: full kernel
    REQUIRE(at(2, 2, 1) == 27.0);
}

TEST_CASE("dropout: same seed gives bitwise-identical outputs, eval is identity") {
    Graph g;
    int x = g.add_input("x", {2, 4, 4, 4});
    g.dropout(x, 0.3, "drop");
    ParamSet<double> none;
    Rng rng(5);
    Tensor<double> in = random_tensor({2, 4, 4, 4}, rng);
    auto a = forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::train, 77);
    auto b = forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::train, 77);
    REQUIRE(a.data == b.data);
    auto c = forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::train, 78);
    REQUIRE(a.data != c.data);
    auto e = forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::eval, 1);
    REQUIRE(e.data == in.data);
}

TEST_CASE("shape inference is total and fails before numerics, naming the node") {
    Graph g;
    int x = g.add_input("x", {1, 5, 5, 5});
    // 5^3 not tileable by 2/2 pooling: fails at graph construction
    bool threw = false;
    try {
        g.maxpool3d(x, 2, 2, "pool_bad");
    } catch (const ShapeError& e) {
        threw = true;
        REQUIRE(std::string(e.what()).find("pool_bad") != std::string::npos);
    }
    REQUIRE(threw);
    // graph is still usable afterwards
    int r = g.relu(x, "ok");
    REQUIRE(g.nodes[static_cast<size_t>(r)].out_shape == Shape{1, 5, 5, 5});
}

TEST_CASE("forward rejects mis-shaped runtime input") {
    Graph g;
    g.add_input("x", {1, 4, 4, 4});
    g.relu(0, "relu");
    ParamSet<double> none;
    Tensor<double> bad({1, 2, 2, 2}, 1.0);
    REQUIRE_THROWS_AS(
        forward<double>(g, none, std::span<const Tensor<double>>(&bad, 1), Mode::eval, 0),
        ShapeError);
}

TEST_CASE("non-finite intermediate raises NumericsError") {
    Graph g;
    int x = g.add_input("x", {1, 2, 2, 2});
    int y = g.mul(x, x, "square");
    g.sum_all(y, "loss");
    ParamSet<double> none;
    Tensor<double> in({1, 2, 2, 2}, 1e200);
    REQUIRE_THROWS_AS(
        forward<double>(g, none, std::span<const Tensor<double>>(&in, 1), Mode::eval, 0),
        NumericsError);
}

TEST_CASE("gradient of 0.5*|theta|^2 is theta") {
    Graph g;
    int th = g.add_param("theta", {2});
    int sq = g.mul(th, th, "sq");
    int s = g.sum_all(sq, "sum");
    int half = g.add_input("half", {});
    g.mul(s, half, "loss");
    ParamSet<double> p;
    Tensor<double> t({2});
    t[0] = 1.0;
    t[1] = 2.0;
    p.add("theta", t);
    Tensor<double> half_v = Tensor<double>::scalar(0.5);
    auto grad =
        gradient<double>(g, p, std::span<const Tensor<double>>(&half_v, 1), Mode::eval, 0);
    REQUIRE(grad.at("theta")[0] == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(grad.at("theta")[1] == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("gradient requires a scalar loss node") {
    Graph g;
    int th = g.add_param("theta", {2});
    g.mul(th, th, "sq");
    ParamSet<double> p;
    p.add("theta", Tensor<double>({2}, 1.0));
    REQUIRE_THROWS_AS(gradient<double>(g, p, {}, Mode::eval, 0), ContractError);
}

TEST_CASE("unused parameter has exactly zero gradient") {
    Graph g;
    int th = g.add_param("used", {2});
    g.add_param("unused", {3});
    int sq = g.mul(th, th, "sq");
    g.sum_all(sq, "loss");
    ParamSet<double> p;
    p.add("used", Tensor<double>({2}, 1.5));
    p.add("unused", Tensor<double>({3}, 9.0));
    auto grad = gradient<double>(g, p, {}, Mode::eval, 0, 3);
    for (int64_t i = 0; i < 3; ++i) REQUIRE(grad.at("unused")[i] == 0.0);
    REQUIRE(grad.at("used")[0] == 3.0);
}

TEST_CASE("every primitive passes the finite-difference gradient check") {
    for (uint64_t trial = 0; trial < 20; ++trial) {
        for (auto& c : make_primitive_cases(1000 + trial)) {
            INFO(c.name << " trial " << trial);
            std::vector<const Tensor<double>*> ptrs;
            for (auto& t : c.inputs) ptrs.push_back(&t);
            auto analytic = [&]() {
                Evaluator<double> ev(c.g, c.params, ptrs, c.mode, c.seed);
                return ev.backward(c.g.output);
            }();
            auto loss_fn = [&](const ParamSet<double>& p) {
                Evaluator<double> ev(c.g, p, ptrs, c.mode, c.seed);
                return ev.scalar_value(c.g.output);
            };
            auto numeric = finite_diff_gradient(loss_fn, c.params, 1e-5);
            REQUIRE(max_rel_err(analytic, numeric) <= 1e-6);
        }
    }
}

TEST_CASE("gradient matches finite differences on random tiny nets") {
    for (uint64_t s : {11ull, 22ull, 33ull}) {
        auto net = build_tiny_net(s, s == 33ull);
        std::vector<const Tensor<double>*> ptrs;
        for (auto& t : net.inputs) ptrs.push_back(&t);
        Evaluator<double> ev(net.g, net.params, ptrs, net.mode, net.seed);
        auto analytic = ev.backward(net.g.output);
        auto loss_fn = [&](const ParamSet<double>& p) {
            Evaluator<double> e2(net.g, p, ptrs, net.mode, net.seed);
            return e2.scalar_value(net.g.output);
        };
        auto numeric = finite_diff_gradient(loss_fn, net.params, 1e-5);
        REQUIRE(max_rel_err(analytic, numeric) <= 1e-6);
    }
}

TEST_CASE("forward and gradient are bitwise deterministic") {
    auto net = build_tiny_net(77, true);
    std::vector<const Tensor<double>*> ptrs;
    for (auto& t : net.inputs) ptrs.push_back(&t);
    Evaluator<double> e1(net.g, net.params, ptrs, Mode::train, 5);
    Evaluator<double> e2(net.g, net.params, ptrs, Mode::train, 5);
    REQUIRE(e1.value(net.g.output).data == e2.value(net.g.output).data);
    REQUIRE(bitwise_equal(e1.backward(net.g.output), e2.backward(net.g.output)));
}

// loss = 0.5 * a * theta^2 on a single scalar parameter
static Graph quadratic_graph() {
    Graph g;
    int th = g.add_param("theta", {1});
    int sq = g.mul(th, th, "sq");
    int s = g.sum_all(sq, "sum");
    int c = g.add_input("half_a", {});
    g.mul(s, c, "loss");
    return g;
}

TEST_CASE("hvp: quadratic closed form and zero vector") {
    Graph g = quadratic_graph();
    ParamSet<double> p;
    p.add("theta", Tensor<double>({1}, 1.0));
    const double a = 0.5;
    Tensor<double> half_a = Tensor<double>::scalar(0.5 * a);
    std::vector<Tensor<double>> ins{half_a};

    GradSet<double> v = zeros_like(p);
    v.at("theta")[0] = 1.0;
    auto hv = hessian_vector_product<double>(g, p, ins, Mode::eval, 0, g.output, v);
    REQUIRE(hv.at("theta")[0] == Catch::Approx(a).margin(1e-10));

    GradSet<double> zero = zeros_like(p);
    auto hz = hessian_vector_product<double>(g, p, ins, Mode::eval, 0, g.output, zero);
    REQUIRE(hz.at("theta")[0] == 0.0);
}

TEST_CASE("hvp is linear on quadratic losses") {
    // loss = sum(theta * theta) => H = 2I; use a 3-vector parameter
    Graph g;
    int th = g.add_param("theta", {3});
    int sq = g.mul(th, th, "sq");
    g.sum_all(sq, "loss");
    ParamSet<double> p;
    Rng rng(3);
    p.add("theta", random_tensor({3}, rng));
    GradSet<double> v1 = zeros_like(p), v2 = zeros_like(p);
    for (int64_t i = 0; i < 3; ++i) {
        v1.at("theta")[i] = rng.uniform(-1, 1);
        v2.at("theta")[i] = rng.uniform(-1, 1);
    }
    const double a = 0.7, b = -1.3;
    GradSet<double> combo = zeros_like(p);
    axpy(combo, a, v1);
    axpy(combo, b, v2);
    auto h_combo = hessian_vector_product<double>(g, p, {}, Mode::eval, 0, g.output, combo);
    auto h1 = hessian_vector_product<double>(g, p, {}, Mode::eval, 0, g.output, v1);
    auto h2 = hessian_vector_product<double>(g, p, {}, Mode::eval, 0, g.output, v2);
    for (int64_t i = 0; i < 3; ++i) {
        const double want = a * h1.at("theta")[i] + b * h2.at("theta")[i];
        const double got = h_combo.at("theta")[i];
        REQUIRE(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("hvp matches finite differences of the gradient on tiny nets") {
    for (uint64_t s : {101ull, 202ull}) {
        auto net = build_tiny_net(s);
        std::vector<const Tensor<double>*> ptrs;
        for (auto& t : net.inputs) ptrs.push_back(&t);
        std::span<const Tensor<double>> ins(net.inputs.data(), net.inputs.size());
        Rng rng(s + 5);
        GradSet<double> v = zeros_like(net.params);
        for (auto& [_, t] : v.entries)
            for (auto& x : t.data) x = rng.uniform(-1, 1);
        auto hv = hessian_vector_product<double>(net.g, net.params, ins, net.mode, net.seed,
                                                 net.g.output, v);
        // oracle: central differences of the gradient at a fixed step
        const double h = 1e-5;
        ParamSet<double> plus = net.params;
        axpy(plus, h, v);
        ParamSet<double> minus = net.params;
        axpy(minus, -h, v);
        auto gp = gradient<double>(net.g, plus, ins, net.mode, net.seed);
        auto gm = gradient<double>(net.g, minus, ins, net.mode, net.seed);
        GradSet<double> want = std::move(gp);
        axpy(want, -1.0, gm);
        scale(want, 1.0 / (2.0 * h));
        REQUIRE(max_rel_err(hv, want) <= 1e-4);
    }
}

TEST_CASE("hvp requires congruent direction vector") {
    Graph g = quadratic_graph();
    ParamSet<double> p;
    p.add("theta", Tensor<double>({1}, 1.0));
    Tensor<double> half_a = Tensor<double>::scalar(0.25);
    std::vector<Tensor<double>> ins{half_a};
    GradSet<double> bad;
    bad.add("other", Tensor<double>({1}, 1.0));
    REQUIRE_THROWS_AS(
        hessian_vector_product<double>(g, p, ins, Mode::eval, 0, g.output, bad),
        ContractError);
}

TEST_CASE("finite_diff_gradient closed forms") {
    Graph g;
    int th = g.add_param("theta", {1});
    int sq = g.mul(th, th, "sq");
    g.sum_all(sq, "loss");
    ParamSet<double> p;
    p.add("theta", Tensor<double>({1}, 3.0));
    auto loss_fn = [&](const ParamSet<double>& q) {
        Evaluator<double> ev(g, q, {}, Mode::eval, 0);
        return ev.scalar_value(g.output);
    };
    auto grad = finite_diff_gradient(loss_fn, p, 1e-5);
    REQUIRE(grad.at("theta")[0] == Catch::Approx(6.0).margin(1e-8));

    auto const_fn = [](const ParamSet<double>&) { return 4.2; };
    auto zero = finite_diff_gradient(const_fn, p, 1e-5);
    REQUIRE(zero.at("theta")[0] == 0.0);

    REQUIRE_THROWS_AS(finite_diff_gradient(const_fn, p, 0.0), ContractError);
}
