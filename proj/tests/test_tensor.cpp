#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dualdiff/tensor.hpp"
#include "test_support.hpp"

using namespace dualdiff;

TEST_CASE("elementwise basics") {
    auto x = Tensor::scalar(0.0);
    CHECK(sigmoid(x).item() == doctest::Approx(0.5).epsilon(1e-15));

    auto y = Tensor::scalar(2.5);
    CHECK(exp(log(y)).item() == doctest::Approx(2.5).epsilon(1e-15));

    // extended-precision oracle: 1/(1+e^-13.30) = 1 - 1.6744904055114539e-6
    auto z = Tensor::scalar(13.30);
    CHECK(std::fabs(sigmoid(z).item() - (1.0 - 1.6744904055114539e-6)) < 1e-10);
}

TEST_CASE("elementwise dispatcher mirrors named ops") {
    auto a = Tensor::from_data({3}, {0.3, -1.2, 2.0});
    auto b = Tensor::from_data({3}, {1.5, 0.5, -2.0});
    CHECK(elementwise(ElemOp::add, a, &b).values() == add(a, b).values());
    CHECK(elementwise(ElemOp::mul, a, &b).values() == mul(a, b).values());
    CHECK(elementwise(ElemOp::tanh, a).values() == tanh(a).values());
    CHECK_THROWS_AS(elementwise(ElemOp::add, a), ContractError);
    CHECK_THROWS_AS(elementwise(ElemOp::neg, a, &b), ContractError);
}

TEST_CASE("broadcasting shapes and errors") {
    auto a = Tensor::from_data({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from_data({2, 3}, {10, 20, 30, 40, 50, 60});
    auto c = add(a, b);
    CHECK(c.shape() == Shape{2, 2, 3});
    CHECK(c.values()[0] == 11);
    CHECK(c.values()[3] == 41);   // a[0,0,0] + b[1,0]
    CHECK(c.values()[6] == 14);   // a[1,0,0] + b[0,0]

    auto bad = Tensor::from_data({4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("domain errors") {
    auto neg_t = Tensor::from_data({2}, {1.0, -1.0});
    CHECK_THROWS_AS(log(neg_t), DomainError);
    CHECK_THROWS_AS(sqrt(neg_t), DomainError);
    auto zero_t = Tensor::from_data({2}, {1.0, 0.0});
    auto one = Tensor::from_data({2}, {1.0, 1.0});
    CHECK_THROWS_AS(div(one, zero_t), DomainError);
}

TEST_CASE("non-finite results raise numeric errors") {
    auto big = Tensor::scalar(1e308);
    CHECK_THROWS_AS(exp(big), NumericError);
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("matmul identity and hand sums") {
    auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(11);
    auto m = Tensor::randn({3, 3}, rng);
    auto p = matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(p.values()[i] == doctest::Approx(m.values()[i]).epsilon(1e-15));

    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_data({2, 1}, {1, 1});
    auto c = matmul(a, b);
    CHECK(c.values()[0] == 3);
    CHECK(c.values()[1] == 7);

    auto bad = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("matmul against triple-loop oracle") {
    Rng rng(42);
    auto a = Tensor::randn({4, 5}, rng);
    auto b = Tensor::randn({5, 6}, rng);
    auto c = matmul(a, b);
    // independent naive contraction
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k) acc += a.values()[i * 5 + k] * b.values()[k * 6 + j];
            CHECK(std::fabs(c.values()[i * 6 + j] - acc) <= 1e-12);
        }
    }
}

TEST_CASE("batched matmul broadcasts batch dims") {
    Rng rng(7);
    auto a = Tensor::randn({2, 3, 4}, rng);   // batch 2
    auto b = Tensor::randn({4, 5}, rng);      // shared
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    for (int bi = 0; bi < 2; ++bi) {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 5; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    acc += a.values()[bi * 12 + i * 4 + k] * b.values()[k * 5 + j];
                }
                CHECK(std::fabs(c.values()[bi * 15 + i * 5 + j] - acc) <= 1e-12);
            }
        }
    }
}

TEST_CASE("backward on simple graphs") {
    SUBCASE("sum of squares") {
        auto x = Tensor::from_data({3}, {1, 2, 3}, true);
        Tape tape;
        auto loss = sum(mul(x, x));
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>{2, 4, 6});
    }
    SUBCASE("sigmoid times constant") {
        auto w = Tensor::scalar(0.0);
        auto w_param = Tensor::from_data({1}, {0.0}, true);
        (void)w;
        Tape tape;
        auto loss = scale(sigmoid(w_param), 4.0);
        tape.backward(loss);
        CHECK(w_param.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("backward contract errors") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar
    auto loss = sum(y);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);  // second backward

    Tape other;
    CHECK_THROWS_AS(other.backward(loss), ContractError);  // foreign tape
}

TEST_CASE("gradients accumulate across tensor reuse") {
    auto x = Tensor::from_data({1}, {3.0}, true);
    Tape tape;
    auto loss = sum(add(mul(x, x), x));  // x^2 + x -> 2x + 1 = 7
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("gradient accumulation linearity") {
    Rng rng(3);
    const double a = 0.7, b = -1.3;
    std::vector<double> g_combined, g_l1, g_l2;
    {
        auto x = Tensor::randn({4}, rng, true);
        auto vals = x.values();
        {
            Tape tape;
            auto l1 = sum(mul(x, x));
            auto l2 = sum(tanh(x));
            auto loss = add(scale(l1, a), scale(l2, b));
            tape.backward(loss);
            g_combined = x.grad();
        }
        auto x1 = Tensor::from_data({4}, vals, true);
        {
            Tape tape;
            tape.backward(sum(mul(x1, x1)));
            g_l1 = x1.grad();
        }
        auto x2 = Tensor::from_data({4}, vals, true);
        {
            Tape tape;
            tape.backward(sum(tanh(x2)));
            g_l2 = x2.grad();
        }
    }
    for (int i = 0; i < 4; ++i) {
        CHECK(std::fabs(g_combined[i] - (a * g_l1[i] + b * g_l2[i])) <= 1e-12);
    }
}

TEST_CASE("two-layer tanh network vs finite differences") {
    Rng rng(5);
    auto w1 = Tensor::rand_uniform({3, 4}, -1.0, 1.0, rng, true);
    auto b1 = Tensor::rand_uniform({4}, -0.5, 0.5, rng, true);
    auto w2 = Tensor::rand_uniform({4, 1}, -1.0, 1.0, rng, true);
    auto x = Tensor::randn({2, 3}, rng);

    auto forward = [&]() {
        return sum(matmul(tanh(add(matmul(x, w1), b1)), w2));
    };
    test_support::check_param_gradients(forward, {w1, b1, w2}, 1e-5, 1e-4);
}

TEST_CASE("structured ops gradients vs finite differences") {
    Rng rng(9);
    SUBCASE("softmax + gather + slice") {
        auto p = Tensor::rand_uniform({3, 5}, -2.0, 2.0, rng, true);
        auto forward = [&]() {
            auto s = softmax(p);
            auto g = gather(s, 1, {0, 3});
            auto sl = slice(g, 0, 1, 2);
            return sum(mul(sl, sl));
        };
        test_support::check_param_gradients(forward, {p}, 1e-5, 1e-4);
    }
    SUBCASE("layer_norm") {
        auto p = Tensor::rand_uniform({4, 6}, -2.0, 2.0, rng, true);
        auto forward = [&]() {
            auto y = layer_norm(p);
            return sum(mul(y, exp(scale(y, 0.1))));
        };
        test_support::check_param_gradients(forward, {p}, 1e-5, 1e-4);
    }
    SUBCASE("concat + transpose + matmul") {
        auto u = Tensor::rand_uniform({2, 3}, -1.0, 1.0, rng, true);
        auto v = Tensor::rand_uniform({2, 3}, -1.0, 1.0, rng, true);
        auto forward = [&]() {
            auto c = concat({u, v}, 0);           // [4,3]
            auto m = matmul(c, transpose(c));     // [4,4]
            return mean(m);
        };
        test_support::check_param_gradients(forward, {u, v}, 1e-5, 1e-4);
    }
    SUBCASE("broadcast binary ops") {
        auto a = Tensor::rand_uniform({2, 1, 3}, 0.5, 1.5, rng, true);
        auto b = Tensor::rand_uniform({4, 3}, 0.5, 1.5, rng, true);
        auto forward = [&]() { return sum(div(mul(a, b), add(a, b))); };
        test_support::check_param_gradients(forward, {a, b}, 1e-5, 1e-4);
    }
    SUBCASE("softplus and clamp interior") {
        auto a = Tensor::rand_uniform({5}, -1.5, 1.5, rng, true);
        auto forward = [&]() { return sum(mul(softplus(a), clamp(a, -2.0, 2.0))); };
        test_support::check_param_gradients(forward, {a}, 1e-5, 1e-4);
    }
}

TEST_CASE("random composed graph finite-difference property") {
    // parameters in [-2,2], composed from the generic op set
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        auto p = Tensor::rand_uniform({6}, -2.0, 2.0, rng, true);
        auto q = Tensor::rand_uniform({6}, -2.0, 2.0, rng, true);
        auto forward = [&]() {
            auto h = tanh(add(p, mul(q, sigmoid(p))));
            auto z = sub(exp(scale(h, 0.3)), neg(q));
            return mean(mul(z, z));
        };
        test_support::check_param_gradients(forward, {p, q}, 1e-5, 1e-4);
    }
}

TEST_CASE("in-place mutation guard") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    {
        Tape tape;
        auto y = mul(x, x);
        (void)y;
        CHECK_THROWS_AS(x.mutable_values(), ContractError);
    }
    // tape released: mutation allowed again
    CHECK_NOTHROW(x.mutable_values());
}

TEST_CASE("no-grad guard suppresses recording") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    {
        NoGradGuard guard;
        auto y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.recorded_ops() == 0);
}

TEST_CASE("determinism of seeded ops") {
    Rng r1(77), r2(77);
    auto a = Tensor::randn({16}, r1);
    auto b = Tensor::randn({16}, r2);
    CHECK(a.values() == b.values());
    CHECK(r1.child("x").uniform() == r2.child("x").uniform());
}
