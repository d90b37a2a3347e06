#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "physhdr/error.hpp"
#include "physhdr/nn/layers.hpp"

using namespace physhdr;
using namespace physhdr::nn;
using physhdr::testing::gradcheck;

namespace {

Tensor rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform(std::move(s), rng, lo, hi);
}

constexpr double kTol = 1e-5;

} // namespace

TEST_CASE("elementwise op gradients") {
    const Shape s{2, 3, 4, 5};
    CHECK(gradcheck([](auto& v) { return add(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}) < kTol);
    CHECK(gradcheck([](auto& v) { return sub(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}) < kTol);
    CHECK(gradcheck([](auto& v) { return mul(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}) < kTol);
    CHECK(gradcheck([](auto& v) { return div(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2, 0.5, 2.0)}) < kTol);
    CHECK(gradcheck([](auto& v) { return scale(v[0], -2.5); }, {rnd(s, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return add_scalar(v[0], 4.0); }, {rnd(s, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return scale_per_sample(v[0], {0.5, -3.0}); }, {rnd(s, 3)}) < kTol);
}

TEST_CASE("unary op gradients") {
    const Shape s{3, 7};
    CHECK(gradcheck([](auto& v) { return silu(v[0]); }, {rnd(s, 4, -3, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return relu(v[0]); }, {rnd(s, 4, -3, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::tanh(v[0]); }, {rnd(s, 4, -3, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return sigmoid(v[0]); }, {rnd(s, 4, -3, 3)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::exp(v[0]); }, {rnd(s, 4, -2, 2)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::expm1(v[0]); }, {rnd(s, 4, -2, 2)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::log1p(v[0]); }, {rnd(s, 4, 0.0, 3.0)}) < kTol);
    CHECK(gradcheck([](auto& v) { return square(v[0]); }, {rnd(s, 4)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::abs(v[0]); }, {rnd(s, 4)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::clamp(v[0], -0.5, 0.5); }, {rnd(s, 4)}) < kTol);
    CHECK(gradcheck([](auto& v) { return nn::mu_law(v[0], 5000.0); }, {rnd(s, 4, 0.01, 1.0)}, 1, 1e-7) < 1e-5);
}

TEST_CASE("reduction and broadcast gradients") {
    const Shape s{2, 3, 4, 4};
    CHECK(gradcheck([](auto& v) { return sum(v[0]); }, {rnd(s, 5)}) < kTol);
    CHECK(gradcheck([](auto& v) { return mean(v[0]); }, {rnd(s, 5)}) < kTol);
    CHECK(gradcheck([](auto& v) { return spatial_mean(v[0]); }, {rnd(s, 5)}) < kTol);
    CHECK(gradcheck([](auto& v) { return channel_weighted_sum(v[0], {0.2, 0.7, 0.1}); }, {rnd(s, 5)}) < kTol);
    CHECK(gradcheck([](auto& v) { return add_channel_bias(v[0], v[1]); }, {rnd(s, 5), rnd({3}, 6)}) < kTol);
    CHECK(gradcheck([](auto& v) { return add_sample_channel(v[0], v[1]); }, {rnd(s, 5), rnd({2, 3}, 6)}) < kTol);
    CHECK(gradcheck([](auto& v) { return mul_spatial(v[0], v[1]); }, {rnd(s, 5), rnd({2, 1, 4, 4}, 6)}) < kTol);
    CHECK(gradcheck([](auto& v) { return div_spatial(v[0], v[1]); }, {rnd(s, 5), rnd({2, 1, 4, 4}, 6, 0.5, 2)}) < kTol);
}

TEST_CASE("layout op gradients") {
    const Shape s{2, 3, 4, 6};
    CHECK(gradcheck([](auto& v) { return reshape(v[0], {6, 24}); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return concat({v[0], v[1]}, 1); }, {rnd(s, 7), rnd({2, 2, 4, 6}, 8)}) < kTol);
    CHECK(gradcheck([](auto& v) { return concat({v[0], v[1]}, 1); }, {rnd({2, 3, 5}, 7), rnd({2, 4, 5}, 8)}) < kTol);
    CHECK(gradcheck([](auto& v) { return slice_channels(v[0], 1, 3); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return to_tokens(v[0]); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return from_tokens(v[0], 4, 6); }, {rnd({2, 24, 3}, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return patchify(v[0], 2); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return upsample_nearest2x(v[0]); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return forward_diff(v[0], 2); }, {rnd(s, 7)}) < kTol);
    CHECK(gradcheck([](auto& v) { return forward_diff(v[0], 3); }, {rnd(s, 7)}) < kTol);
}

TEST_CASE("linear algebra gradients") {
    CHECK(gradcheck([](auto& v) { return linear(v[0], v[1], v[2]); }, {rnd({2, 5, 4}, 9), rnd({4, 3}, 10), rnd({3}, 11)}) < kTol);
    CHECK(gradcheck([](auto& v) { return linear(v[0], v[1], Var()); }, {rnd({7, 4}, 9), rnd({4, 3}, 10)}) < kTol);
    CHECK(gradcheck([](auto& v) { return bmm(v[0], v[1]); }, {rnd({2, 3, 4}, 12), rnd({2, 4, 5}, 13)}) < kTol);
    CHECK(gradcheck([](auto& v) { return bmm_nt(v[0], v[1]); }, {rnd({2, 3, 4}, 12), rnd({2, 5, 4}, 13)}) < kTol);
    CHECK(gradcheck([](auto& v) { return softmax_last(v[0]); }, {rnd({2, 3, 6}, 14, -3, 3)}) < kTol);
}

TEST_CASE("conv2d and group_norm gradients") {
    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {4, 2, 1}}) {
        CAPTURE(k);
        CAPTURE(stride);
        const double err = gradcheck([stride, pad](auto& v) { return conv2d(v[0], v[1], v[2], stride, pad); },
                                     {rnd({2, 3, 6, 6}, 15), rnd({4, 3, k, k}, 16), rnd({4}, 17)});
        CHECK(err < kTol);
    }
    CHECK(gradcheck([](auto& v) { return group_norm(v[0], v[1], v[2], 2); },
                    {rnd({2, 4, 3, 3}, 18, -2, 2), rnd({4}, 19, 0.5, 1.5), rnd({4}, 20)}) < 1e-4);
}

TEST_CASE("conv2d matches a direct loop") {
    const Tensor x = rnd({1, 2, 5, 5}, 21);
    const Tensor w = rnd({3, 2, 3, 3}, 22);
    const Tensor b = rnd({3}, 23);
    const Tensor y = conv2d(Var(x), Var(w), Var(b), 2, 1).value();
    REQUIRE(y.shape() == Shape{1, 3, 3, 3});
    for (int co = 0; co < 3; ++co) {
        for (int oy = 0; oy < 3; ++oy) {
            for (int ox = 0; ox < 3; ++ox) {
                double acc = b[co];
                for (int ci = 0; ci < 2; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5) acc += w.at(co, ci, ky, kx) * x.at(0, ci, iy, ix);
                        }
                    }
                }
                CHECK(y.at(0, co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(add(Var(Tensor({2, 3})), Var(Tensor({3, 2}))), ShapeError);
    CHECK_THROWS_AS(conv2d(Var(Tensor({1, 2, 4, 4})), Var(Tensor({3, 5, 3, 3})), Var(), 1, 1), ShapeError);
    CHECK_THROWS_AS(patchify(Var(Tensor({1, 2, 5, 4})), 2), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Var x(Tensor({3}, std::vector<double>{1.0, 2.0, 3.0}), true);
    const Var y = mul(x, x);
    backward(sum(add(y, x)));
    const Tensor g = x.grad();
    CHECK(g[0] == doctest::Approx(3.0));
    CHECK(g[2] == doctest::Approx(7.0));
}

TEST_CASE("NoGradGuard records nothing") {
    Var x(Tensor({2}, 1.0), true);
    Var y;
    {
        NoGradGuard guard;
        y = mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
}

TEST_CASE("AdamW minimizes a quadratic and decays weights") {
    ParamStore store;
    Var p = store.add("p", Tensor({4}, std::vector<double>{3.0, -2.0, 1.0, 5.0}));
    AdamW opt(store.select({}), {0.05, 0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 2000; ++i) {
        opt.zero_grad();
        backward(sum(square(add_scalar(p, -1.0))));
        opt.step();
    }
    for (double v : p.value().values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-3));

    // With zero gradient only the decoupled decay acts: p *= (1 - lr * wd).
    ParamStore s2;
    Var q = s2.add("q", Tensor({1}, 2.0));
    AdamW decay(s2.select({}), {0.1, 0.9, 0.999, 1e-8, 0.5});
    backward(scale(sum(q), 0.0));
    decay.step();
    CHECK(q.value()[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
}

TEST_CASE("ParamStore checksum tracks values") {
    ParamStore store;
    std::mt19937_64 rng(1);
    Init init{store, rng};
    Conv2d conv(init, "enc.conv", 2, 3, 3);
    Linear lin(init, "dec.lin", 4, 2);
    const auto before = store.checksum("enc.");
    const auto dec_before = store.checksum("dec.");
    store.get("dec.lin.weight").mutable_value()[0] += 1.0;
    CHECK(store.checksum("enc.") == before);
    CHECK(store.checksum("dec.") != dec_before);
    CHECK(store.select({"enc."}).size() == 2);
    CHECK(store.parameter_count() == 3 * 2 * 9 + 3 + 4 * 2 + 2);
    CHECK_THROWS_AS(store.add("enc.conv.weight", Tensor({1})), ConfigError);
    CHECK(pick_groups(32) == 8);
    CHECK(pick_groups(6) == 3);
    CHECK(pick_groups(3) == 1);
}
