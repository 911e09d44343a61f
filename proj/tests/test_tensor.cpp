#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "miavlm/tensor.hpp"
#include "oracles.hpp"

using namespace miavlm;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

}  // namespace

// ===========================================================================
// matmul
// ===========================================================================

TEST_CASE("matmul: identity passthrough") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto c = matmul(eye, a);
    CHECK(c.data() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul: unit-vector column selection") {
    auto a = Tensor::from_data({1, 2}, {1, 0});
    auto b = Tensor::from_data({2, 1}, {0, 5});
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.at(0) == 0.0);
}

TEST_CASE("matmul: random instance matches triple-loop oracle") {
    std::mt19937_64 rng(11);
    auto av = random_values(3 * 4, rng);
    auto bv = random_values(4 * 2, rng);
    auto c = matmul(Tensor::from_data({3, 4}, av), Tensor::from_data({4, 2}, bv));
    auto expected = oracle::ref_matmul(av, bv, 3, 4, 2);
    CHECK(oracle::max_abs_diff(c.data(), expected) < 1e-12);
}

TEST_CASE("matmul: oracle agreement across sizes up to 16") {
    std::mt19937_64 rng(12);
    for (std::size_t r : {1u, 5u, 16u})
        for (std::size_t k : {1u, 7u, 16u})
            for (std::size_t c : {1u, 3u, 16u}) {
                auto av = random_values(r * k, rng);
                auto bv = random_values(k * c, rng);
                auto got = matmul(Tensor::from_data({r, k}, av), Tensor::from_data({k, c}, bv));
                CHECK(oracle::max_abs_diff(got.data(), oracle::ref_matmul(av, bv, r, k, c)) < 1e-12);
            }
}

TEST_CASE("matmul: dimension error names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2x3)"), std::invalid_argument);
    try {
        matmul(a, b);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("(4x2)") != std::string::npos);
    }
}

// ===========================================================================
// softmax_rows
// ===========================================================================

TEST_CASE("softmax: symmetric row splits evenly") {
    auto s = softmax_rows(Tensor::from_data({1, 2}, {0, 0}));
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax: max shift avoids overflow") {
    auto s = softmax_rows(Tensor::from_data({1, 2}, {1000, 0}));
    CHECK(std::isfinite(s.at(0)));
    CHECK(s.at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.at(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax: matches extended-precision oracle on random rows") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t r = 1 + trial % 3, c = 2 + trial % 5;
        auto xv = random_values(r * c, rng, -5.0, 5.0);
        auto s = softmax_rows(Tensor::from_data({r, c}, xv));
        CHECK(oracle::max_abs_diff(s.data(), oracle::ref_softmax_rows(xv, r, c)) < 1e-14);
    }
}

TEST_CASE("softmax: rows sum to one and shifting is a no-op") {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c = 2 + trial % 6;
        auto xv = random_values(c, rng, -3.0, 3.0);
        auto shifted = xv;
        const double shift = 10.0 * (trial % 7 - 3);
        for (auto& v : shifted) v += shift;
        auto s0 = softmax_rows(Tensor::from_data({1, c}, xv));
        auto s1 = softmax_rows(Tensor::from_data({1, c}, shifted));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += s0.at(j);
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        CHECK(oracle::max_abs_diff(s0.data(), s1.data()) <= 1e-12);
    }
}

TEST_CASE("softmax: NaN input is a domain error") {
    auto x = Tensor::from_data({1, 2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_rows(x), std::domain_error);
}

TEST_CASE("softmax: column permutation permutes output bit-exactly") {
    std::mt19937_64 rng(23);
    auto xv = random_values(6, rng, -2.0, 2.0);
    const std::size_t perm[6] = {4, 2, 0, 5, 1, 3};
    std::vector<double> pv(6);
    for (std::size_t j = 0; j < 6; ++j) pv[j] = xv[perm[j]];
    auto s = softmax_rows(Tensor::from_data({1, 6}, xv));
    auto sp = softmax_rows(Tensor::from_data({1, 6}, pv));
    for (std::size_t j = 0; j < 6; ++j) CHECK(sp.at(j) == s.at(perm[j]));
}

// ===========================================================================
// mean_axis
// ===========================================================================

TEST_CASE("mean_axis: row means") {
    auto m = mean_axis(Tensor::from_data({2, 2}, {1, 3, 5, 7}), 0);
    CHECK(m.shape() == Shape{2});
    CHECK(m.at(0) == 3.0);
    CHECK(m.at(1) == 5.0);
}

TEST_CASE("mean_axis: constant tensor is a fixed point") {
    auto m = mean_axis(Tensor::full({3, 4}, 2.5), 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(m.at(i) == 2.5);
}

TEST_CASE("mean_axis: matches loop-sum oracle") {
    std::mt19937_64 rng(31);
    auto xv = random_values(5 * 3, rng);
    auto m = mean_axis(Tensor::from_data({5, 3}, xv), 0);
    CHECK(oracle::max_abs_diff(m.data(), oracle::ref_mean_axis0(xv, 5, 3)) < 1e-15);
}

TEST_CASE("mean_axis: axis out of range") {
    CHECK_THROWS_AS(mean_axis(Tensor::zeros({2, 2}), 2), std::invalid_argument);
}

// ===========================================================================
// mlp2_forward
// ===========================================================================

TEST_CASE("mlp2: zero weights annihilate") {
    Mlp2Params p{Tensor::zeros({3, 4}), Tensor::zeros({4}), Tensor::zeros({4, 2}),
                 Tensor::zeros({2})};
    auto y = mlp2_forward(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}), p, Activation::kGelu);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("mlp2: identity weights with linear activation pass input through") {
    auto eye3 = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Mlp2Params p{eye3, Tensor::zeros({3}), eye3, Tensor::zeros({3})};
    std::vector<double> xv{0.5, -1.25, 2.0};
    auto y = mlp2_forward(Tensor::from_data({1, 3}, xv), p, Activation::kLinear);
    CHECK(y.data() == xv);
}

TEST_CASE("mlp2: random instance matches unrolled oracle") {
    std::mt19937_64 rng(41);
    const std::size_t rows = 2, d_in = 3, d_h = 5, d_out = 2;
    auto xv = random_values(rows * d_in, rng);
    auto w1 = random_values(d_in * d_h, rng);
    auto b1 = random_values(d_h, rng);
    auto w2 = random_values(d_h * d_out, rng);
    auto b2 = random_values(d_out, rng);
    Mlp2Params p{Tensor::from_data({d_in, d_h}, w1), Tensor::from_data({d_h}, b1),
                 Tensor::from_data({d_h, d_out}, w2), Tensor::from_data({d_out}, b2)};
    auto y = mlp2_forward(Tensor::from_data({rows, d_in}, xv), p, Activation::kGelu);
    auto expected = oracle::ref_mlp2(xv, rows, d_in, w1, b1, d_h, w2, b2, d_out, true);
    CHECK(oracle::max_abs_diff(y.data(), expected) < 1e-12);
}

// ===========================================================================
// backward
// ===========================================================================

TEST_CASE("backward: gradient of sum is all ones") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    sum_all(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: gradient of dot(w, w) is 2w") {
    std::vector<double> wv{0.5, -1.0, 2.0};
    auto w = Tensor::from_data({3}, wv, true);
    sum_all(mul(w, w)).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * wv[i]));
}

TEST_CASE("backward: repeated calls accumulate into leaves") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto loss = sum_all(scale(x, 3.0));
    loss.backward();
    loss.backward();
    CHECK(x.grad()[0] == 6.0);
    CHECK(x.grad()[1] == 6.0);
}

TEST_CASE("backward: non-scalar root is a contract error") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto y = scale(x, 2.0);
    CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("backward: diamond graph accumulates both paths") {
    auto x = Tensor::from_data({2}, {1.0, -2.0}, true);
    auto a = scale(x, 2.0);
    auto b = scale(x, 3.0);
    sum_all(add(a, b)).backward();
    CHECK(x.grad()[0] == 5.0);
    CHECK(x.grad()[1] == 5.0);
}

TEST_CASE("backward: every op matches central finite differences") {
    std::mt19937_64 rng(51);
    const double tol = 1e-6;

    auto check = [&](const char* name, std::vector<NamedParam> params,
                     const std::function<Tensor()>& forward) {
        forward().backward();
        auto report = gradcheck::check_gradients(params, [&] { return forward().value(); });
        INFO(name, ": worst param ", report.worst_param, "[", report.worst_index, "] analytic ",
             report.analytic, " numeric ", report.numeric);
        CHECK(report.max_rel_err < tol);
    };

    auto a = Tensor::from_data({3, 4}, random_values(12, rng), true);
    auto b = Tensor::from_data({4, 2}, random_values(8, rng), true);
    check("matmul", {{"a", a}, {"b", b}}, [&] { return sum_all(mul(matmul(a, b), matmul(a, b))); });

    auto x = Tensor::from_data({2, 5}, random_values(10, rng), true);
    check("softmax", {{"x", x}}, [&] {
        auto s = softmax_rows(x);
        return sum_all(mul(s, s));
    });

    auto g = Tensor::from_data({4}, random_values(4, rng, 0.5, 1.5), true);
    auto be = Tensor::from_data({4}, random_values(4, rng), true);
    auto xn = Tensor::from_data({3, 4}, random_values(12, rng), true);
    check("layer_norm", {{"x", xn}, {"gamma", g}, {"beta", be}}, [&] {
        auto y = layer_norm(xn, g, be);
        return sum_all(mul(y, y));
    });

    auto xg = Tensor::from_data({2, 3}, random_values(6, rng, -2.0, 2.0), true);
    check("gelu", {{"x", xg}}, [&] { return sum_all(mul(gelu(xg), gelu(xg))); });

    auto xm = Tensor::from_data({4, 3}, random_values(12, rng), true);
    check("mean_axis", {{"x", xm}}, [&] { return sum_all(mul(mean_axis(xm, 0), mean_axis(xm, 0))); });

    auto xc1 = Tensor::from_data({2, 3}, random_values(6, rng), true);
    auto xc2 = Tensor::from_data({1, 3}, random_values(3, rng), true);
    check("concat_rows", {{"a", xc1}, {"b", xc2}}, [&] {
        auto c = concat_rows({xc1, xc2});
        return sum_all(mul(c, c));
    });

    auto xs = Tensor::from_data({2, 6}, random_values(12, rng), true);
    check("slice_cols", {{"x", xs}}, [&] {
        auto s = slice_cols(xs, 1, 4);
        return sum_all(mul(s, s));
    });

    auto table = Tensor::from_data({5, 3}, random_values(15, rng), true);
    check("embedding", {{"table", table}}, [&] {
        auto e = embedding_lookup(table, {0, 3, 3, 1});
        return sum_all(mul(e, e));
    });

    auto logits = Tensor::from_data({1, 4}, random_values(4, rng), true);
    check("cross_entropy", {{"logits", logits}}, [&] { return cross_entropy(logits, 2); });

    auto bias = Tensor::from_data({4}, random_values(4, rng), true);
    auto xb = Tensor::from_data({3, 4}, random_values(12, rng), true);
    check("add_bias", {{"x", xb}, {"bias", bias}}, [&] {
        auto y = add_bias(xb, bias);
        return sum_all(mul(y, y));
    });

    auto wsum_w = Tensor::from_data({3}, {0.2, 0.5, 0.3}, true);
    std::vector<Tensor> items{Tensor::from_data({2, 2}, random_values(4, rng), true),
                              Tensor::from_data({2, 2}, random_values(4, rng), true),
                              Tensor::from_data({2, 2}, random_values(4, rng), true)};
    check("weighted_sum",
          {{"w", wsum_w}, {"i0", items[0]}, {"i1", items[1]}, {"i2", items[2]}}, [&] {
              auto y = weighted_sum(items, wsum_w, false);
              return sum_all(mul(y, y));
          });

    auto xt = Tensor::from_data({3, 2}, random_values(6, rng), true);
    check("transpose", {{"x", xt}}, [&] {
        auto y = transpose(xt);
        return sum_all(mul(y, y));
    });
}

// ===========================================================================
// weighted_sum
// ===========================================================================

TEST_CASE("weighted_sum: single item with unit weight is exact passthrough") {
    auto o = Tensor::from_data({2, 2}, {0.1, -0.7, 3.14159, 2.5});
    auto y = weighted_sum({o}, Tensor::from_data({1}, {1.0}));
    CHECK(y.data() == o.data());
}

TEST_CASE("weighted_sum: convex combination of equal items is that item") {
    auto o = Tensor::from_data({2}, {1.5, -2.5});
    auto y = weighted_sum({o, o, o}, Tensor::from_data({3}, {0.25, 0.5, 0.25}));
    CHECK(y.at(0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(y.at(1) == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("weighted_sum: matches direct elementwise oracle") {
    std::mt19937_64 rng(61);
    std::vector<double> o1 = random_values(4, rng), o2 = random_values(4, rng);
    auto y = weighted_sum({Tensor::from_data({2, 2}, o1), Tensor::from_data({2, 2}, o2)},
                          Tensor::from_data({2}, {0.25, 0.75}));
    auto expected = oracle::ref_weighted_sum({o1, o2}, {0.25, 0.75});
    CHECK(oracle::max_abs_diff(y.data(), expected) < 1e-15);
}

TEST_CASE("weighted_sum: result is independent of input order") {
    std::mt19937_64 rng(62);
    std::vector<std::vector<double>> ov;
    std::vector<double> wv{0.1, 0.4, 0.2, 0.3};
    for (int i = 0; i < 4; ++i) ov.push_back(random_values(6, rng));
    auto make = [&](const std::vector<std::size_t>& order) {
        std::vector<Tensor> items;
        std::vector<double> w;
        for (auto i : order) {
            items.push_back(Tensor::from_data({2, 3}, ov[i]));
            w.push_back(wv[i]);
        }
        return weighted_sum(items, Tensor::from_data({4}, w));
    };
    auto base = make({0, 1, 2, 3});
    for (auto& order : std::vector<std::vector<std::size_t>>{
             {3, 2, 1, 0}, {1, 3, 0, 2}, {2, 0, 3, 1}}) {
        auto y = make(order);
        CHECK(y.data() == base.data());  // bit-exact
    }
}

TEST_CASE("weighted_sum: errors on mismatch") {
    auto o = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(weighted_sum({o, o}, Tensor::from_data({3}, {0.5, 0.25, 0.25})),
                    std::invalid_argument);
    CHECK_THROWS_AS(weighted_sum({o, o}, Tensor::from_data({2}, {0.8, 0.1})),
                    std::invalid_argument);
}

// ===========================================================================
// determinism
// ===========================================================================

TEST_CASE("ops are bit-deterministic across repeated evaluation") {
    std::mt19937_64 rng(71);
    auto xv = random_values(20, rng);
    auto wv = random_values(20, rng);
    auto run = [&] {
        auto x = Tensor::from_data({4, 5}, xv);
        auto w = Tensor::from_data({5, 4}, wv);
        auto y = softmax_rows(matmul(x, w));
        return mean_axis(y, 0).data();
    };
    CHECK(run() == run());
}
