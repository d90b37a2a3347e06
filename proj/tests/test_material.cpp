#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "physhdr/error.hpp"
#include "physhdr/material.hpp"
#include "test_util.hpp"

using namespace physhdr;
using namespace physhdr::material;
using nn::Tensor;
using nn::Var;
using physhdr::testing::gradcheck;

namespace {

MaterialMaps filled(int n, int h, int w, double v) {
    return {Tensor({n, 3, h, w}, v), Tensor({n, 1, h, w}, v), Tensor({n, 1, h, w}, v)};
}

MaterialMaps random_maps(int n, int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    return {Tensor::uniform({n, 3, h, w}, rng, lo, hi), Tensor::uniform({n, 1, h, w}, rng, lo, hi),
            Tensor::uniform({n, 1, h, w}, rng, lo, hi)};
}

// Straight loop over samples and maps, no shared code with the library path.
double oracle_loss(const MaterialMaps& a, const MaterialMaps& b, double mu) {
    auto t = [mu](double x) { return std::log1p(mu * x) / std::log1p(mu); };
    const int n = a.batch();
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        for (auto member : {&MaterialMaps::albedo, &MaterialMaps::roughness, &MaterialMaps::metallic}) {
            const Tensor& x = a.*member;
            const Tensor& y = b.*member;
            const std::size_t per = x.numel() / n;
            double acc = 0.0;
            for (std::size_t i = s * per; i < (s + 1) * per; ++i) acc += std::abs(t(x[i]) - t(y[i]));
            total += acc / static_cast<double>(per);
        }
    }
    return total / n;
}

bool in_unit(const Tensor& t) {
    for (double v : t.values())
        if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
}

} // namespace

TEST_CASE("toy decomposition stays in [0, 1] and is deterministic") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const HdrImage img = physhdr::testing::random_hdr(12, 9, rng, 0.0f, trial % 2 ? 1e4f : 1.0f);
        const MaterialMaps a = decompose(img);
        CHECK(in_unit(a.albedo));
        CHECK(in_unit(a.roughness));
        CHECK(in_unit(a.metallic));
        const MaterialMaps b = decompose(img);
        CHECK(a.albedo == b.albedo);
        CHECK(a.roughness == b.roughness);
        CHECK(a.metallic == b.metallic);
    }
    CHECK_NOTHROW(decompose(HdrImage(4, 4, 0.0f)));
}

TEST_CASE("constant-color image has zero roughness everywhere") {
    HdrImage img(10, 13);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 13; ++x) {
            img.at(y, x, 0) = 2.0f;
            img.at(y, x, 1) = 0.5f;
            img.at(y, x, 2) = 1.25f;
        }
    const MaterialMaps m = decompose(img);
    for (double v : m.roughness.values()) CHECK(v == 0.0);
}

TEST_CASE("toy albedo is chroma-normalized color") {
    HdrImage img(1, 1);
    img.at(0, 0, 0) = 0.2f;
    img.at(0, 0, 1) = 0.4f;
    img.at(0, 0, 2) = 0.4f;
    const MaterialMaps m = decompose(img);
    // normalized by its own peak: (0.5, 1, 1), sum 2.5
    const double s = 2.5 + 1e-4;
    CHECK(m.albedo[0] == doctest::Approx(0.5 / s).epsilon(1e-12));
    CHECK(m.albedo[1] == doctest::Approx(1.0 / s).epsilon(1e-12));
    CHECK(m.albedo[2] == doctest::Approx(1.0 / s).epsilon(1e-12));
}

TEST_CASE("toy metallic favors bright saturated pixels") {
    HdrImage img(1, 3, 0.0f);
    img.at(0, 0, 0) = 10.0f;  // bright red
    img.at(0, 1, 0) = img.at(0, 1, 1) = img.at(0, 1, 2) = 10.0f;  // bright white
    img.at(0, 2, 0) = 0.1f;  // dim red
    const MaterialMaps m = decompose(img);
    CHECK(m.metallic[0] > m.metallic[1]);
    CHECK(m.metallic[0] > m.metallic[2]);
    CHECK(m.metallic[1] > m.metallic[2]);
}

TEST_CASE("toy decomposition is differentiable") {
    std::mt19937_64 rng(8);
    const Tensor x = Tensor::uniform({2, 3, 5, 6}, rng, 0.05, 1.0);
    ToyDecomposition toy;
    for (auto member : {&MaterialVars::albedo, &MaterialVars::roughness, &MaterialVars::metallic}) {
        const double err = gradcheck([&](const std::vector<Var>& v) { return toy.decompose(v[0]).*member; }, {x}, 3, 1e-6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("decomposition registry") {
    CHECK(make_provider("toy")->name() == "toy");
    CHECK_THROWS_AS(make_provider("intrinsic-v2"), ConfigError);
    CHECK_THROWS_AS(register_provider("toy", [] { return std::make_unique<ToyDecomposition>(); }), ConfigError);
    register_provider("flat-toy", [] {
        ToyDecomposition::Params p;
        p.roughness_kappa = 1.0;
        return std::make_unique<ToyDecomposition>(p);
    });
    CHECK(make_provider("flat-toy")->name() == "toy");
    const auto ids = provider_ids();
    CHECK(std::find(ids.begin(), ids.end(), "flat-toy") != ids.end());
}

TEST_CASE("material loss examples") {
    const auto mu = ToneCurve::mu_law(5000.0);
    CHECK(material_loss(filled(1, 4, 4, 0.3), filled(1, 4, 4, 0.3), mu) == 0.0);
    CHECK(material_loss(filled(1, 4, 4, 0.0), filled(1, 4, 4, 1.0), mu) == doctest::Approx(3.0).epsilon(1e-12));
    const double half = 3.0 * std::log1p(2500.0) / std::log1p(5000.0);
    const double got = material_loss(filled(1, 4, 4, 0.0), filled(1, 4, 4, 0.5), mu);
    CHECK(got == doctest::Approx(half).epsilon(1e-12));
    CHECK(std::abs(got - 2.7559) < 1e-4);
}

TEST_CASE("material loss matches the per-sample oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 1 + trial % 4;
        const MaterialMaps a = random_maps(n, 6, 5, rng);
        const MaterialMaps b = random_maps(n, 6, 5, rng);
        CHECK(material_loss(a, b) == doctest::Approx(oracle_loss(a, b, 5000.0)).epsilon(1e-12));
    }
}

TEST_CASE("material loss properties") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const MaterialMaps a = random_maps(2, 4, 4, rng);
        const MaterialMaps b = random_maps(2, 4, 4, rng);
        const MaterialMaps c = random_maps(2, 4, 4, rng);
        const double ab = material_loss(a, b), ba = material_loss(b, a);
        CHECK(ab >= 0.0);
        CHECK(ab == ba);
        CHECK(material_loss(a, a) == 0.0);
        CHECK(material_loss(a, c) <= ab + material_loss(b, c) + 1e-12);
    }
}

TEST_CASE("material loss is monotone in one map's discrepancy") {
    std::mt19937_64 rng(29);
    std::uniform_int_distribution<int> pick(0, 15);
    for (int trial = 0; trial < 50; ++trial) {
        const MaterialMaps gt = random_maps(1, 4, 4, rng);
        MaterialMaps pred = random_maps(1, 4, 4, rng);
        double prev = material_loss(gt, pred);
        const int i = pick(rng);
        // push one roughness pixel further from its target in steps
        for (int step = 0; step < 5; ++step) {
            double& v = pred.roughness[i];
            v = gt.roughness[i] >= v ? std::max(0.0, v - 0.05) : std::min(1.0, v + 0.05);
            const double now = material_loss(gt, pred);
            CHECK(now >= prev);
            prev = now;
        }
    }
}

TEST_CASE("material loss gradient matches finite differences") {
    std::mt19937_64 rng(31);
    const MaterialMaps gt = random_maps(2, 3, 4, rng, 0.05, 0.4);
    const MaterialMaps pred = random_maps(2, 3, 4, rng, 0.6, 0.95);  // every |diff| well above 1e-2
    const MaterialVars g{Var(gt.albedo), Var(gt.roughness), Var(gt.metallic)};
    const double err = gradcheck(
        [&](const std::vector<Var>& v) { return material_loss(g, MaterialVars{v[0], v[1], v[2]}); },
        {pred.albedo, pred.roughness, pred.metallic});
    CHECK(err < 1e-3);
}

TEST_CASE("material loss with the Reinhard curve") {
    const double got = material_loss(filled(1, 2, 2, 0.0), filled(1, 2, 2, 1.0), ToneCurve::reinhard());
    CHECK(got == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("material loss input errors") {
    CHECK_THROWS_AS(material_loss(filled(1, 4, 4, 0.0), filled(1, 4, 5, 0.0)), ShapeError);
    CHECK_THROWS_AS(material_loss(filled(1, 4, 4, 0.0), filled(2, 4, 4, 0.0)), ShapeError);
    CHECK_THROWS_AS(material_loss(filled(1, 4, 4, 0.0), filled(1, 4, 4, 1.5)), RangeError);
    CHECK_THROWS_AS(material_loss(filled(1, 4, 4, -0.1), filled(1, 4, 4, 0.0)), RangeError);
    MaterialMaps bad = filled(1, 4, 4, 0.0);
    bad.roughness = Tensor({1, 1, 3, 4});
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = filled(1, 4, 4, 0.0);
    bad.metallic[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad.validate(), RangeError);
}

TEST_CASE("total loss") {
    CHECK(total_loss(1.0, 0.5, LossWeights{0.2}) == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(total_loss(0.7, 0.5, LossWeights{0.0}) == 0.7);
    CHECK(total_loss(0.7, 0.0, LossWeights{}) == 0.7);
    CHECK(LossWeights{}.lambda_mat == 0.2);
    CHECK_THROWS_AS(total_loss(std::nan(""), 0.5, LossWeights{}), NumericError);
    CHECK_THROWS_AS(total_loss(1.0, std::numeric_limits<double>::infinity(), LossWeights{}), NumericError);
    CHECK_THROWS_AS(total_loss(1.0, 0.5, LossWeights{-0.1}), ConfigError);

    const Var ld(Tensor({1}, 1.0), true), lm(Tensor({1}, 0.5), true);
    const Var full = total_loss(ld, lm, LossWeights{0.2});
    CHECK(full.item() == doctest::Approx(1.1).epsilon(1e-15));
    nn::backward(full);
    CHECK(ld.grad()[0] == 1.0);
    CHECK(lm.grad()[0] == doctest::Approx(0.2));
    CHECK(total_loss(ld, lm, LossWeights{0.0}).node() == ld.node());
}
