#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crossl/autodiff.hpp"
#include "crossl/optim.hpp"
#include "crossl/rng.hpp"
#include "test_support.hpp"

using namespace crossl;
using crossl::test::gradient_check;
using crossl::test::random_tensor;

TEST_CASE("tensor basics and shape checks") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), shape_error);
    CHECK(Tensor::scalar(5.0).item() == 5.0);
    CHECK_THROWS_AS(Tensor::zeros({2, 2}).item(), shape_error);
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(42);
    Rng f1 = c.fork("mask", 0);
    Rng f2 = c.fork("mask", 1);
    CHECK(f1.next_u64() != f2.next_u64());

    // Same seed, same call sequence, bit-identical doubles.
    Rng d1(7), d2(7);
    for (int i = 0; i < 50; ++i) {
        CHECK(d1.uniform() == d2.uniform());
        CHECK(d1.normal() == d2.normal());
    }
}

TEST_CASE("conv1d forward matches the direct convolution oracle") {
    // W=1, stride=1, identity kernel: output equals input.
    {
        Tensor x({1, 4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
        Tensor k({1, 2, 2}, {1, 0, 0, 1});
        Tensor b({2}, {0, 0});
        Var out = conv1d(constant(x), constant(k), constant(b), 1);
        CHECK(out->value.values == x.values);
    }
    // All-zero input: every output element equals its bias.
    {
        Rng rng(1);
        Var out = conv1d(constant(Tensor::zeros({2, 5, 3})),
                         constant(random_tensor({2, 3, 4}, rng)),
                         constant(Tensor({4}, {1, 2, 3, 4})), 1);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t t = 0; t < 4; ++t)
                for (std::size_t o = 0; o < 4; ++o)
                    CHECK(out->value.at(n, t, o) == doctest::Approx(o + 1.0));
    }
    // [1,2,3,4] * [1,1] -> [3,5,7].
    {
        Tensor x({1, 4, 1}, {1, 2, 3, 4});
        Tensor k({2, 1, 1}, {1, 1});
        Tensor b({1}, {0});
        Var out = conv1d(constant(x), constant(k), constant(b), 1);
        CHECK(out->value.shape == std::vector<std::size_t>{1, 3, 1});
        CHECK(out->value.values == std::vector<double>{3, 5, 7});
    }
    // Strided output length: T_out = floor((T-W)/stride)+1.
    {
        Var out = conv1d(constant(Tensor::zeros({1, 10, 1})),
                         constant(Tensor::zeros({3, 1, 1})), constant(Tensor::zeros({1})), 2);
        CHECK(out->value.shape[1] == 4);
    }
    // Randomized against a plain quadruple-loop oracle.
    {
        Rng rng(11);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t n = 1 + rng.uniform_int(3), t = 4 + rng.uniform_int(6);
            const std::size_t ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(3);
            const std::size_t w = 1 + rng.uniform_int(std::min<std::size_t>(t, 4));
            const std::size_t stride = 1 + rng.uniform_int(2);
            Tensor x = random_tensor({n, t, ci}, rng);
            Tensor k = random_tensor({w, ci, co}, rng);
            Tensor b = random_tensor({co}, rng);
            Var out = conv1d(constant(x), constant(k), constant(b), stride);
            const std::size_t t_out = (t - w) / stride + 1;
            REQUIRE(out->value.shape == std::vector<std::size_t>{n, t_out, co});
            for (std::size_t ni = 0; ni < n; ++ni)
                for (std::size_t ti = 0; ti < t_out; ++ti)
                    for (std::size_t oi = 0; oi < co; ++oi) {
                        double acc = b.at(oi);
                        for (std::size_t wi = 0; wi < w; ++wi)
                            for (std::size_t c = 0; c < ci; ++c)
                                acc += x.at(ni, ti * stride + wi, c) * k.at(wi, c, oi);
                        CHECK(out->value.at(ni, ti, oi) == doctest::Approx(acc).epsilon(1e-12));
                    }
        }
    }
}

TEST_CASE("conv1d error contracts") {
    Tensor x = Tensor::zeros({1, 3, 2});
    Tensor k = Tensor::zeros({5, 2, 1});
    Tensor b = Tensor::zeros({1});
    CHECK_THROWS_AS(conv1d(constant(x), constant(k), constant(b), 1), shape_error); // T < W
    Tensor k2 = Tensor::zeros({2, 3, 1});
    CHECK_THROWS_AS(conv1d(constant(x), constant(k2), constant(b), 1), shape_error);
    Tensor b2 = Tensor::zeros({2});
    Tensor k3 = Tensor::zeros({2, 2, 1});
    CHECK_THROWS_AS(conv1d(constant(x), constant(k3), constant(b2), 1), shape_error);
    CHECK_THROWS_AS(conv1d(constant(x), constant(k3), constant(b), 0), shape_error);
}

TEST_CASE("dense forward") {
    // Identity weight, zero bias.
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor zero({2}, {0, 0});
    CHECK(dense(constant(x), constant(eye), constant(zero))->value.values == x.values);

    // Zero input: rows equal bias.
    Tensor bias({2}, {5, -1});
    Var out = dense(constant(Tensor::zeros({3, 2})), constant(eye), constant(bias));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out->value.at(i, 0) == 5.0);
        CHECK(out->value.at(i, 1) == -1.0);
    }

    // Hand matrix multiply: [[1,2]] * [[1,0],[1,1]] + [0,1] = [[3,3]].
    Tensor a({1, 2}, {1, 2});
    Tensor w({2, 2}, {1, 0, 1, 1});
    Tensor b2({2}, {0, 1});
    Var r = dense(constant(a), constant(w), constant(b2));
    CHECK(r->value.values == std::vector<double>{3, 3});

    CHECK_THROWS_AS(dense(constant(Tensor::zeros({1, 3})), constant(eye), constant(zero)),
                    shape_error);
}

TEST_CASE("relu") {
    Tensor x({5}, {-1, 0, 2, -3.5, 7});
    CHECK(relu(constant(x))->value.values == std::vector<double>{0, 0, 2, 0, 7});
    Tensor neg({3}, {-1, -2, -3});
    CHECK(relu(constant(neg))->value.values == std::vector<double>{0, 0, 0});
    Tensor pos({3}, {1, 2, 3});
    CHECK(relu(constant(pos))->value.values == pos.values);
}

TEST_CASE("global_mean_pool") {
    // T=1 squeezes, values preserved.
    Tensor x({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    Var out = global_mean_pool(constant(x));
    CHECK(out->value.shape == std::vector<std::size_t>{2, 3});
    CHECK(out->value.values == x.values);

    // Constant input stays constant.
    Var c = global_mean_pool(constant(Tensor::full({1, 7, 2}, 3.25)));
    CHECK(c->value.values == std::vector<double>{3.25, 3.25});

    // [1,3] over T -> 2.
    Tensor two({1, 2, 1}, {1, 3});
    CHECK(global_mean_pool(constant(two))->value.item() == 2.0);

    CHECK_THROWS_AS(global_mean_pool(constant(Tensor::zeros({2, 0, 3}))), shape_error);
}

TEST_CASE("softmax cross entropy values and gradient") {
    // Uniform logits, C=4: loss = ln 4.
    Var l = softmax_cross_entropy(constant(Tensor::zeros({3, 4})), {0, 1, 2});
    CHECK(l->value.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // Raising the true-class logit drives the loss toward zero.
    double prev = l->value.item();
    for (double margin : {2.0, 5.0, 20.0}) {
        Tensor t = Tensor::zeros({1, 4});
        t.at(0, 2) = margin;
        const double cur = softmax_cross_entropy(constant(t), {2})->value.item();
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK(prev < 1e-8);

    // Closed form: N=1, C=2, logits [0,1], label 1 -> ln(1+e^-1).
    Tensor z({1, 2}, {0, 1});
    CHECK(softmax_cross_entropy(constant(z), {1})->value.item() ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

    // Gradient = (softmax - onehot)/N.
    Var logits = leaf(Tensor({2, 3}, {0.5, -1.0, 2.0, 0.0, 0.0, 0.0}));
    Var loss = softmax_cross_entropy(logits, {2, 0});
    backward(loss);
    Tensor probs = softmax_rows(logits->value);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const double expected =
                (probs.at(i, j) - ((i == 0 && j == 2) || (i == 1 && j == 0) ? 1.0 : 0.0)) / 2.0;
            CHECK(logits->grad.at(i, j) == doctest::Approx(expected).epsilon(1e-12));
        }

    CHECK_THROWS_AS(softmax_cross_entropy(constant(Tensor::zeros({1, 3})), {3}),
                    std::out_of_range);
    CHECK_THROWS_AS(softmax_cross_entropy(constant(Tensor::zeros({1, 3})), {-1}),
                    std::out_of_range);
    CHECK_THROWS_AS(softmax_cross_entropy(constant(Tensor::zeros({2, 3})), {0}), shape_error);
}

TEST_CASE("backward basics") {
    // loss = sum(p) -> grad all ones.
    Var p = leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    backward(sum(p));
    CHECK(p->grad.values == std::vector<double>{1, 1, 1, 1});

    // Constant loss: no parameter on the path keeps zero grad.
    Var q = leaf(Tensor({2}, {1, 2}));
    Var c = sum(constant(Tensor({2}, {5, 5})));
    backward(c);
    CHECK(q->grad.values == std::vector<double>{0, 0});

    // Accumulation is additive across backward calls.
    Var r = leaf(Tensor({2}, {1, 1}));
    Var s = sum(r);
    backward(s);
    backward(s);
    CHECK(r->grad.values == std::vector<double>{2, 2});

    CHECK_THROWS_AS(backward(nullptr), std::invalid_argument);
    CHECK_THROWS_AS(backward(leaf(Tensor({2}, {1, 2}))), shape_error); // non-scalar root
}

TEST_CASE("finite differences confirm every op adjoint") {
    Rng rng(2024);
    const int trials = 20;

    for (int trial = 0; trial < trials; ++trial) {
        // conv1d
        {
            Var x = leaf(random_tensor({2, 7, 3}, rng));
            Var k = leaf(random_tensor({3, 3, 4}, rng));
            Var b = leaf(random_tensor({4}, rng));
            Tensor w = random_tensor({2, 3, 4}, rng);
            auto res = gradient_check({x, k, b}, [&] {
                return sum(mul_tensor(conv1d(x, k, b, 2), w));
            });
            CHECK(res.max_rel_err <= 1e-4);
        }
        // dense
        {
            Var x = leaf(random_tensor({3, 4}, rng));
            Var w = leaf(random_tensor({4, 2}, rng));
            Var b = leaf(random_tensor({2}, rng));
            Tensor f = random_tensor({3, 2}, rng);
            auto res = gradient_check({x, w, b}, [&] { return sum(mul_tensor(dense(x, w, b), f)); });
            CHECK(res.max_rel_err <= 1e-4);
        }
        // relu (inputs kept away from the kink)
        {
            Tensor t = random_tensor({4, 5}, rng);
            for (double& v : t.values)
                if (std::abs(v) < 0.05) v = 0.1;
            Var x = leaf(t);
            Tensor f = random_tensor({4, 5}, rng);
            auto res = gradient_check({x}, [&] { return sum(mul_tensor(relu(x), f)); });
            CHECK(res.max_rel_err <= 1e-4);
        }
        // global_mean_pool + reshape + concat + scale + add
        {
            Var x = leaf(random_tensor({2, 6, 3}, rng));
            Var y = leaf(random_tensor({2, 3}, rng));
            Tensor f = random_tensor({2, 6}, rng);
            auto res = gradient_check({x, y}, [&] {
                Var pooled = global_mean_pool(x); // [2,3]
                Var cat = concat_features({pooled, y}); // [2,6]
                Var shaped = reshape(cat, {2, 2, 3});
                return sum(mul_tensor(reshape(add(scale(shaped, 1.7), shaped), {2, 6}), f));
            });
            CHECK(res.max_rel_err <= 1e-4);
        }
        // softmax cross entropy
        {
            Var logits = leaf(random_tensor({4, 3}, rng));
            std::vector<int> labels;
            for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_int(3)));
            auto res = gradient_check({logits}, [&] { return softmax_cross_entropy(logits, labels); });
            CHECK(res.max_rel_err <= 1e-4);
        }
    }
}

TEST_CASE("adam update rule") {
    // Zero gradient leaves the value exactly unchanged.
    {
        std::vector<Parameter> params;
        params.emplace_back("p", Tensor({2}, {1.5, -2.0}));
        Adam opt(0.1);
        opt.step(params);
        CHECK(params[0].value().values == std::vector<double>{1.5, -2.0});
    }
    // Frozen parameter ignores its gradient.
    {
        std::vector<Parameter> params;
        params.emplace_back("p", Tensor({1}, {3.0}), /*train=*/false);
        params[0].grad().values[0] = 10.0;
        Adam opt(0.1);
        for (int i = 0; i < 5; ++i) opt.step(params);
        CHECK(params[0].value().values[0] == 3.0);
        CHECK(params[0].grad().values[0] == 0.0); // grads still zeroed
    }
    // Scalar oracle: g=1, lr=0.1, step 1 decreases the value by lr/(1+eps).
    {
        std::vector<Parameter> params;
        params.emplace_back("p", Tensor({1}, {1.0}));
        params[0].grad().values[0] = 1.0;
        Adam opt(0.1);
        opt.step(params);
        const double mhat = 1.0; // m/bc1 = 0.1/0.1
        const double vhat = 1.0; // v/bc2 = 0.001/0.001
        const double expected = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(params[0].value().values[0] == doctest::Approx(expected).epsilon(1e-15));
        CHECK(params[0].value().values[0] == doctest::Approx(0.9).epsilon(1e-6));
    }
    // Gradients are zeroed after each step.
    {
        std::vector<Parameter> params;
        params.emplace_back("p", Tensor({2}, {0.0, 0.0}));
        params[0].grad().values = {1.0, -1.0};
        Adam opt(0.01);
        opt.step(params);
        CHECK(params[0].grad().values == std::vector<double>{0, 0});
    }
}

TEST_CASE("freeze contract: frozen values bit-identical across many steps") {
    Rng rng(5);
    std::vector<Parameter> params;
    params.emplace_back("frozen", random_tensor({4, 4}, rng), /*train=*/false);
    params.emplace_back("live", random_tensor({4, 4}, rng), /*train=*/true);
    const std::vector<double> frozen_before = params[0].value().values;

    Adam opt(0.05);
    for (int step = 0; step < 25; ++step) {
        for (auto& p : params) {
            p.node->ensure_grad();
            for (double& g : p.grad().values) g = rng.normal();
        }
        opt.step(params);
    }
    CHECK(params[0].value().values == frozen_before);
    CHECK(params[1].value().values != frozen_before);
}
