#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nsync/adam.hpp"
#include "nsync/common.hpp"
#include "nsync/exact.hpp"
#include "nsync/finite_diff.hpp"
#include "nsync/graph.hpp"
#include "nsync/hash.hpp"
#include "nsync/param_set.hpp"
#include "nsync/rng.hpp"
#include "nsync/tensor.hpp"

using namespace nsync;

TEST_CASE("random stream is deterministic and tag-separated") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
    CHECK(derive_seed(1, "x", 0) != derive_seed(1, "x", 1));
    CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
}

TEST_CASE("uniform01 stays in [0,1) and uniform_int respects bounds") {
    RandomStream r(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 50000; ++i) {
        const int k = r.uniform_int(5);
        REQUIRE(k >= 0);
        REQUIRE(k < 5);
        ++hits[k];
    }
    for (int h : hits) CHECK(std::abs(h - 10000) < 500);
    CHECK_THROWS_AS(r.uniform_int(0), NumericError);
}

TEST_CASE("normal draws have roughly standard moments") {
    RandomStream r(123);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        REQUIRE(std::isfinite(x));
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("fnv1a64 matches reference values and file hashing agrees") {
    // Offset basis and the published value for "a".
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);

    const std::string path = "test_numerics_hash.tmp";
    const std::string body = "hash me\nacross lines\n";
    {
        std::ofstream out(path, std::ios::binary);
        out << body;
    }
    CHECK(hash_file_hex(path) == hex64(fnv1a64(body)));
    std::remove(path.c_str());
    CHECK_THROWS_AS(hash_file_hex("no_such_file.bin"), ConfigError);
}

TEST_CASE("tensor shape handling") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    t.at2(1, 2) = 5.0;
    CHECK(t.data[5] == 5.0);
    CHECK_THROWS_AS(shape_numel({2, 0}), ConfigError);
    Tensor v = Tensor::vec({1.0, 2.0, 2.0});
    CHECK(norm2(v.data) == doctest::Approx(3.0));
    CHECK(dot(v.data, v.data) == doctest::Approx(9.0));
}

TEST_CASE("exact sum absorbs catastrophic cancellation") {
    ExactSum s;
    s.add(1e16);
    s.add(1.0);
    s.add(-1e16);
    CHECK(s.approx() == 1.0);
    CHECK(s.sign() == 1);

    ExactSum p;
    p.add_prod(1.0 + std::pow(2.0, -27), 1.0 + std::pow(2.0, -27));
    // (1+u)^2 = 1 + 2u + u^2; the u^2 tail survives in the expansion.
    p.add(-1.0);
    p.add(-std::pow(2.0, -26));
    CHECK(p.approx() == std::pow(2.0, -54));
}

TEST_CASE("exact division reproduces IEEE correctly-rounded quotients") {
    RandomStream r(99);
    for (int i = 0; i < 1000; ++i) {
        const double a = (r.uniform01() - 0.5) * std::pow(10.0, r.uniform_int(12) - 6);
        double b = (r.uniform01() - 0.5) * std::pow(10.0, r.uniform_int(12) - 6);
        if (b == 0.0) b = 0.5;
        ExactSum num, den;
        num.add(a);
        den.add(b);
        CHECK(exact_div(num, den) == a / b);
    }
    ExactSum num, zero;
    num.add(1.0);
    CHECK_THROWS_AS(exact_div(num, zero), NumericError);
}

TEST_CASE("exact dot tracks a widened accumulator") {
    RandomStream r(5);
    std::vector<double> a(64), b(64);
    for (auto& x : a) x = r.normal();
    for (auto& x : b) x = r.normal();
    long double acc = 0.0L;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
    CHECK(exact_dot(a, b).approx() ==
          doctest::Approx(static_cast<double>(acc)).epsilon(1e-14));
}

TEST_CASE("exact comparisons are exact") {
    ExactSum s;
    s.add(1.0);
    s.add(std::pow(2.0, -60));
    CHECK(s.compare(1.0) > 0);
    ExactSum t;
    t.add(1.0);
    CHECK(t.compare(1.0) == 0);
    CHECK(t.compare(2.0) < 0);
    ExactSum u;
    u.add(-3.0);
    CHECK(u.sign() == -1);
    u.negate();
    CHECK(u.sign() == 1);
    CHECK(t.abs_less(u));
}

TEST_CASE("param set layout and flattening") {
    ParamSet ps;
    ps.add("a", Tensor::vec({1.0, 2.0}), true);
    ps.add("w", Tensor::zeros({2, 2}), false);
    ps.add("b", Tensor::vec({3.0}), true);
    CHECK_THROWS_AS(ps.add("a", Tensor::vec({0.0}), false), ConfigError);

    GradLayout lay = ps.trainable_layout();
    CHECK(lay.total == 3);
    REQUIRE(lay.entries.size() == 2);
    CHECK(lay.entries[0].name == "a");
    CHECK(lay.entries[1].offset == 2);

    GradVector flat = ps.flatten_trainable();
    CHECK(flat.values == std::vector<double>{1.0, 2.0, 3.0});
    flat.values = {4.0, 5.0, 6.0};
    ps.assign_trainable(flat);
    CHECK(ps.at("b").data[0] == 6.0);

    ParamSet other;
    other.add("a", Tensor::vec({0.0}), true);
    GradVector wrong = other.flatten_trainable();
    CHECK_THROWS_AS(ps.assign_trainable(wrong), ConfigError);
    CHECK_THROWS_AS(flat.dot(wrong), ConfigError);
}

TEST_CASE("gradient of a linear sum is all ones") {
    ParamSet ps;
    ps.add("p", Tensor::vec({1.0, -2.0, 0.5}), true);
    Graph g;
    Var p = g.param("p", ps.at("p"), true);
    GradVector grad = g.backward(g.sum(p), ps);
    CHECK(grad.values == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("gradient of half squared norm is the point itself") {
    ParamSet ps;
    ps.add("p", Tensor::vec({2.0, -1.0}), true);
    Graph g;
    Var p = g.param("p", ps.at("p"), true);
    Var loss = g.scale(g.sum(g.square(p)), 0.5);
    GradVector grad = g.backward(loss, ps);
    CHECK(grad.values[0] == doctest::Approx(2.0));
    CHECK(grad.values[1] == doctest::Approx(-1.0));
}

TEST_CASE("mlp gradient matches central finite differences") {
    RandomStream r(11);
    ParamSet ps;
    Tensor w1 = Tensor::zeros({4, 3}), w2 = Tensor::zeros({2, 4});
    for (auto& v : w1.data) v = r.normal();
    for (auto& v : w2.data) v = r.normal();
    ps.add("w1", w1, true);
    ps.add("w2", w2, true);
    ps.add("b1", Tensor::vec({0.1, -0.2, 0.3, 0.0}), true);
    Tensor x = Tensor::vec({0.5, -1.0, 2.0});

    auto loss_fn = [&](const ParamSet& p) {
        Graph g;
        Var h = g.silu(g.add(g.matvec(g.param("w1", p.at("w1"), true), g.input(x)),
                             g.param("b1", p.at("b1"), true)));
        Var y = g.matvec(g.param("w2", p.at("w2"), true), h);
        return g.scalar_value(g.sum(g.square(y)));
    };
    Graph g;
    Var h = g.silu(g.add(g.matvec(g.param("w1", ps.at("w1"), true), g.input(x)),
                         g.param("b1", ps.at("b1"), true)));
    Var y = g.matvec(g.param("w2", ps.at("w2"), true), h);
    GradVector ad = g.backward(g.sum(g.square(y)), ps);
    GradVector fd = finite_difference_grad(loss_fn, ps);
    CHECK(grad_rel_error(ad, fd) <= 1e-4);
}

TEST_CASE("every graph op differentiates correctly") {
    RandomStream r(21);
    ParamSet ps;
    Tensor w = Tensor::zeros({3, 4});
    for (auto& v : w.data) v = r.normal();
    ps.add("w", w, true);
    Tensor a0 = Tensor::vec({0.3, -0.7, 1.2});
    ps.add("a", a0, true);

    auto build = [](Graph& g, const ParamSet& p) {
        Var w_ = g.param("w", p.at("w"), true);
        Var a = g.param("a", p.at("a"), true);
        Var row1 = g.row(w_, 1);                       // shape 4
        Var cat = g.concat({a, g.mean(row1)});         // shape 4
        Var mixed = g.emul(g.silu(cat), g.sub(cat, g.scale(cat, 0.25)));
        Var mv = g.matvec(w_, g.add_n({mixed, cat, g.square(cat)}));
        return g.mean(g.square(mv));
    };
    Graph g;
    GradVector ad = g.backward(build(g, ps), ps);
    GradVector fd = finite_difference_grad(
        [&](const ParamSet& p) {
            Graph gg;
            return gg.scalar_value(build(gg, p));
        },
        ps);
    CHECK(grad_rel_error(ad, fd) <= 1e-4);
}

TEST_CASE("frozen parameters take no gradient and appear in no layout") {
    ParamSet ps;
    ps.add("w", Tensor::zeros({2, 2}), false);
    ps.add("v", Tensor::vec({1.0, 1.0}), true);
    ps.at("w").data = {1.0, 2.0, 3.0, 4.0};
    Graph g;
    Var y = g.matvec(g.param("w", ps.at("w"), false), g.param("v", ps.at("v"), true));
    GradVector grad = g.backward(g.sum(y), ps);
    REQUIRE(grad.layout.entries.size() == 1);
    CHECK(grad.layout.entries[0].name == "v");
    // d/dv sum(Wv) = column sums of W.
    CHECK(grad.values[0] == doctest::Approx(4.0));
    CHECK(grad.values[1] == doctest::Approx(6.0));
}

TEST_CASE("graph storage is reused across resets") {
    ParamSet ps;
    ps.add("v", Tensor::vec({1.0, 2.0}), true);
    Graph g;
    for (int i = 0; i < 3; ++i) {
        g.reset();
        Var v = g.param("v", ps.at("v"), true);
        g.backward(g.sum(g.square(v)), ps);
    }
    CHECK(g.live_nodes() > 0);
}

TEST_CASE("loss with no trainable ancestors yields a zero gradient") {
    ParamSet ps;
    ps.add("v", Tensor::vec({1.0}), true);
    Graph g;
    Var c = g.constant(Tensor::vec({3.0, 4.0}));
    GradVector grad = g.backward(g.sum(c), ps);
    CHECK(grad.values == std::vector<double>{0.0});
}

TEST_CASE("finite differences on a bilinear product") {
    ParamSet ps;
    ps.add("p", Tensor::vec({3.0, 5.0}), true);
    auto f = [](const ParamSet& p) { return p.at("p").data[0] * p.at("p").data[1]; };
    GradVector fd = finite_difference_grad(f, ps);
    CHECK(fd.values[0] == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(fd.values[1] == doctest::Approx(3.0).epsilon(1e-6));

    GradVector zero = finite_difference_grad([](const ParamSet&) { return 7.0; }, ps);
    CHECK(zero.values[0] == 0.0);
    CHECK(zero.values[1] == 0.0);
}

TEST_CASE("adam first step follows the bias-corrected closed form") {
    ParamSet ps;
    ps.add("p", Tensor::vec({1.0, -2.0, 0.0}), true);
    AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
    AdamState st = AdamState::init(ps.trainable_layout(), cfg);

    GradVector g = GradVector::zeros(ps.trainable_layout());
    g.values = {0.5, -3.0, 0.0};
    adam_step(ps, g, st);
    // With fresh moments the bias corrections cancel to step = lr*g/(|g|+eps).
    CHECK(ps.at("p").data[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)));
    CHECK(ps.at("p").data[1] == doctest::Approx(-2.0 + 0.01 * 3.0 / (3.0 + 1e-8)));
    CHECK(ps.at("p").data[2] == 0.0);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
    ParamSet ps;
    ps.add("p", Tensor::vec({1.5, -0.5}), true);
    AdamState st = AdamState::init(ps.trainable_layout(), {});
    GradVector g = GradVector::zeros(ps.trainable_layout());
    for (int i = 0; i < 5; ++i) adam_step(ps, g, st);
    CHECK(ps.at("p").data[0] == 1.5);
    CHECK(ps.at("p").data[1] == -0.5);
}

TEST_CASE("adam descends against a constant gradient") {
    ParamSet ps;
    ps.add("p", Tensor::vec({0.0, 0.0}), true);
    AdamState st = AdamState::init(ps.trainable_layout(), {});
    GradVector g = GradVector::zeros(ps.trainable_layout());
    g.values = {1.0, -2.0};
    for (int i = 0; i < 50; ++i) adam_step(ps, g, st);
    CHECK(ps.at("p").data[0] < 0.0);
    CHECK(ps.at("p").data[1] > 0.0);
}

TEST_CASE("adam runs are bitwise deterministic") {
    auto run = [] {
        ParamSet ps;
        ps.add("p", Tensor::vec({0.3, 0.7, -1.1}), true);
        AdamState st = AdamState::init(ps.trainable_layout(), {});
        RandomStream r(8);
        GradVector g = GradVector::zeros(ps.trainable_layout());
        for (int i = 0; i < 200; ++i) {
            for (auto& v : g.values) v = r.normal();
            adam_step(ps, g, st);
        }
        return ps.at("p").data;
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients and layout drift") {
    ParamSet ps;
    ps.add("p", Tensor::vec({1.0}), true);
    AdamState st = AdamState::init(ps.trainable_layout(), {});
    GradVector g = GradVector::zeros(ps.trainable_layout());
    g.values[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(ps, g, st), NumericError);

    ParamSet other;
    other.add("q", Tensor::vec({1.0, 2.0}), true);
    GradVector g2 = GradVector::zeros(other.trainable_layout());
    CHECK_THROWS_AS(adam_step(ps, g2, st), ConfigError);
}
