#include <catch_amalgamated.hpp>

#include <cmath>

#include "jitter/tensor.hpp"
#include "jitter/tensor_io.hpp"

using namespace jitter;

TEST_CASE("matmul identity") {
    auto i2 = tensor({2, 2}, {1, 0, 0, 1});
    auto m = tensor({2, 2}, {3, 4, 5, 6});
    auto r = matmul(i2, m);
    REQUIRE(r->data == std::vector<double>{3, 4, 5, 6});
}

TEST_CASE("matmul 1x2 by 2x1") {
    auto r = matmul(tensor({1, 2}, {1, 2}), tensor({2, 1}, {3, 4}));
    REQUIRE(r->shape == std::vector<int>{1, 1});
    REQUIRE(r->data[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(42);
    auto a = randn({5, 7}, rng);
    auto b = randn({7, 3}, rng);
    auto r = matmul(a, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 7; ++k) s += a->data[i * 7 + k] * b->data[k * 3 + j];
            REQUIRE(std::abs(r->data[i * 3 + j] - s) < 1e-12);
        }
}

TEST_CASE("matmul shape error names both shapes") {
    try {
        matmul(tensor({2, 3}, std::vector<double>(6)), tensor({2, 3}, std::vector<double>(6)));
        FAIL("no error thrown");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("(2x3)") != std::string::npos);
    }
}

TEST_CASE("softmax symmetry and simplex") {
    auto r = softmax(tensor({1, 3}, {0, 0, 0}));
    for (double v : r->data) REQUIRE(std::abs(v - 1.0 / 3.0) < 1e-12);

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = randn({4, 9}, rng, 3.0);
        auto y = softmax(x);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 9; ++j) {
                const double v = y->data[i * 9 + j];
                REQUIRE(v >= 0.0);
                s += v;
            }
            REQUIRE(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("sum_sq and layer_norm basics") {
    REQUIRE(sum_sq(tensor({2}, {3, 4}))->data[0] == 25.0);
    auto ln = layer_norm(full({1, 8}, 3.7));
    for (double v : ln->data) REQUIRE(std::abs(v) < 1e-6);
}

TEST_CASE("non-finite input raises numeric error with index") {
    auto x = tensor({1, 3}, {0.0, std::nan(""), 1.0});
    try {
        softmax(x);
        FAIL("no error thrown");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("1") != std::string::npos);
    }
    REQUIRE_THROWS_AS(gelu(x), NumericError);
}

TEST_CASE("forward ops match naive oracles on small shapes") {
    Rng rng(3);
    auto a = randn({4, 5}, rng);
    auto b = randn({4, 5}, rng);
    auto s = add(a, b);
    auto m = mul(a, b);
    for (std::size_t i = 0; i < a->size(); ++i) {
        REQUIRE(std::abs(s->data[i] - (a->data[i] + b->data[i])) < 1e-12);
        REQUIRE(std::abs(m->data[i] - a->data[i] * b->data[i]) < 1e-12);
    }
    auto mn = mean(a);
    double acc = 0;
    for (double v : a->data) acc += v;
    REQUIRE(std::abs(mn->data[0] - acc / 20.0) < 1e-12);
}

TEST_CASE("grad_check quadratic is near-exact") {
    auto x = tensor({3}, {1, 2, 3});
    const double err = grad_check([](const TensorPtr& t) { return sum_sq(t); }, x);
    REQUIRE(err < 1e-8);
    REQUIRE(std::abs(x->grad[0] - 2.0) < 1e-12);
    REQUIRE(std::abs(x->grad[1] - 4.0) < 1e-12);
    REQUIRE(std::abs(x->grad[2] - 6.0) < 1e-12);
}

TEST_CASE("grad_check step bounds and scalar contract") {
    auto x = tensor({2}, {1, 2});
    REQUIRE_THROWS_AS(grad_check([](const TensorPtr& t) { return sum_sq(t); }, x, 1e-8),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(grad_check([](const TensorPtr& t) { return add(t, t); }, x),
                      std::invalid_argument);
}

TEST_CASE("every differentiable op passes grad_check over 100 random instances") {
    Rng rng(11);
    int instance = 0;
    auto check = [&](const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x) {
        ++instance;
        INFO("instance " << instance);
        REQUIRE(grad_check(f, x) < 1e-4);
    };
    for (int trial = 0; trial < 5; ++trial) {
        const std::uint64_t s = 100 + static_cast<std::uint64_t>(trial);
        Rng r2(s);
        auto w = randn({5, 4}, r2);
        auto v = randn({4}, r2);
        auto g2 = randn({4}, r2);
        auto other = randn({3, 5}, r2);
        auto probs = tensor({2, 3}, {0.2, 0.5, 0.9, 0.1, 0.6, 0.3});

        check([&](const TensorPtr& x) { return sum(matmul(x, w)); }, randn({3, 5}, r2));
        check([&](const TensorPtr& x) { return sum(matmul(other, x)); }, randn({5, 4}, r2));
        check([&](const TensorPtr& x) { return sum(transpose(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum(add(x, x)); }, randn({2, 3}, r2));
        check([&](const TensorPtr& x) { return sum_sq(sub(x, w)); }, randn({5, 4}, r2));
        check([&](const TensorPtr& x) { return sum(mul(x, w)); }, randn({5, 4}, r2));
        check([&](const TensorPtr& x) { return sum(scale(x, -2.5)); }, randn({2, 2}, r2));
        check([&](const TensorPtr& x) { return sum(add_rowvec(x, v)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum(gelu(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum(sigmoid(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum_sq(softmax(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum_sq(layer_norm(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum(rowwise_affine(x, v, g2)); },
              randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return scale(mean(x), 3.0); }, randn({4, 4}, r2));
        check([&](const TensorPtr& x) { return sum(sum_rows(x)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum_sq(slice_cols(x, 1, 3)); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return sum_sq(concat_cols({x, w})); }, randn({5, 2}, r2));
        check([&](const TensorPtr& x) {
            return sum_sq(gather(x, {0, 2, 2, -1, 5}, {5, 1}));
        }, randn({2, 3}, r2));
        check([&](const TensorPtr& x) { return sum_sq(reshape(x, {6, 2})); }, randn({3, 4}, r2));
        check([&](const TensorPtr& x) { return mse_mean(x, w); }, randn({5, 4}, r2));
        check([&](const TensorPtr& x) { return bce_mean(sigmoid(x), probs); }, randn({2, 3}, r2));
    }
    REQUIRE(instance >= 100);
}

TEST_CASE("backward requires scalar root") {
    auto x = tensor({2}, {1, 2}, true);
    auto y = add(x, x);
    REQUIRE_THROWS_AS(backward(y), ShapeError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
    auto x = tensor({2, 2}, {1, 2, 3, 4}, true);
    TensorPtr y;
    {
        NoGradGuard ng;
        y = mul(x, x);
    }
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
}

TEST_CASE("JTT1 round trip preserves f32 values and shape") {
    const std::string path = "test_roundtrip.jtt";
    Rng rng(5);
    auto t = randn({3, 4, 2}, rng);
    write_jtt1(path, *t);
    auto r = read_jtt1(path);
    REQUIRE(r->shape == t->shape);
    for (std::size_t i = 0; i < t->size(); ++i)
        REQUIRE(r->data[i] == static_cast<double>(static_cast<float>(t->data[i])));
    // a second read of the same bytes is bit-identical
    auto r2 = read_jtt1(path);
    REQUIRE(r2->data == r->data);
    std::remove(path.c_str());
}

TEST_CASE("JTT1 rejects bad magic") {
    const std::string path = "test_badmagic.jtt";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE1234";
    }
    REQUIRE_THROWS(read_jtt1(path));
    std::remove(path.c_str());
}

TEST_CASE("tensor construction validates shape") {
    REQUIRE_THROWS_AS(tensor({2, 3}, {1.0, 2.0}), ShapeError);
    REQUIRE_THROWS_AS(zeros({0, 3}), ShapeError);
}

TEST_CASE("bce clamp is counted") {
    const std::size_t before = bce_clamp_count();
    bce_mean(tensor({2}, {0.0, 1.0}), tensor({2}, {0.0, 1.0}));
    REQUIRE(bce_clamp_count() == before + 2);
}
