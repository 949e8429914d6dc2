#include <cmath>

#include "doctest.h"
#include "mgvq/mgq.hpp"
#include "mgvq/objectives.hpp"

using namespace mgvq;
using nd::Tensor;
using nd::Tensor64;

namespace {

template <class T = float>
nd::BasicTensor<T> uniform_tensor(nd::Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<T> v(nd::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return nd::BasicTensor<T>(std::move(shape), std::move(v));
}

Tensor constant(nd::Shape shape, float v) { return Tensor::full(std::move(shape), v); }

// Naive two-loop mean of squared differences over an H x W x 3 pair.
double two_loop_mse(const Tensor& a, const Tensor& b) {
    double total = 0.0;
    const std::size_t rows = a.dim(0), cols = a.dim(1) * a.dim(2);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = static_cast<double>(a.data()[r * cols + c]) - b.data()[r * cols + c];
            total += d * d;
        }
    return total / static_cast<double>(rows * cols);
}

double weighted(const LossBreakdown& p, const LossWeights& w) {
    return w.l2 * p.l2 + w.charbonnier * p.charbonnier + w.commit * p.commit + w.vq * p.vq + w.gan * p.gan +
           w.perceptual * p.perceptual;
}

}  // namespace

TEST_CASE("loss weight defaults and validation") {
    const LossWeights w;
    CHECK(w.l2 == 2.0);
    CHECK(w.charbonnier == 1.0);
    CHECK(w.commit == 0.25);
    CHECK(w.vq == 1.0);
    CHECK(w.gan == 0.5);
    CHECK(w.perceptual == 1.0);
    LossWeights bad;
    bad.vq = -1.0;
    CHECK_THROWS(bad.validate());
    bad = {};
    bad.epsilon = 0.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("charbonnier examples") {
    const auto x = constant({4, 4, 3}, 0.3f);
    CHECK(charbonnier(x, x, 0.25).item() == 0.25f);
    CHECK(charbonnier(constant({2, 2, 3}, 4.0f), constant({2, 2, 3}, 0.0f), 3.0).item() == doctest::Approx(5.0));
    CHECK(charbonnier<double>(Tensor64::full({3, 3}, 0.5), Tensor64::full({3, 3}, 0.0), 1e-8).item() ==
          doctest::Approx(0.5).epsilon(1e-6));
    CHECK_THROWS_AS(charbonnier(x, constant({4, 4, 2}, 0.0f), 1e-3), nd::ShapeError);
}

TEST_CASE("l2 examples") {
    Rng rng(1);
    const auto a = uniform_tensor({5, 6, 3}, rng), b = uniform_tensor({5, 6, 3}, rng);
    CHECK(l2_loss(a, a).item() == 0.0f);
    CHECK(l2_loss(constant({2, 2, 3}, 0.75f), constant({2, 2, 3}, 0.25f)).item() == 0.25f);
    CHECK(l2_loss(a, b).item() == doctest::Approx(two_loop_mse(a, b)).epsilon(1e-6));
    CHECK_THROWS_AS(l2_loss(a, constant({5, 6, 2}, 0.0f)), nd::ShapeError);
}

TEST_CASE("commit and vq losses: equal values, disjoint gradient targets") {
    Rng rng(2);
    auto cb = cast_codebooks<double>(CodebookSet::init(2, 8, 3, 5));
    for (auto& t : cb.tables) t.set_requires_grad(true);
    Tensor64 z = uniform_tensor<double>({2, 2, 6}, rng, -0.2, 0.2);
    z.set_requires_grad(true);
    const auto q = quantize(z, cb);
    const std::size_t N = z.numel();

    const auto commit = commit_loss(z, q.z_q), vq = vq_loss(z, q.z_q);
    CHECK(commit.item() == vq.item());

    nd::backward(commit);
    for (std::size_t i = 0; i < N; ++i) CHECK(z.grad()[i] == doctest::Approx(2.0 * (z.data()[i] - q.z_q.data()[i]) / N));
    for (const auto& t : cb.tables) CHECK_FALSE(t.has_grad());

    z.zero_grad();
    nd::backward(vq);
    CHECK_FALSE(z.has_grad());
    bool any = false;
    for (const auto& t : cb.tables) any |= t.has_grad();
    CHECK(any);

    const auto zero = commit_loss(q.z_q.detach(), q.z_q.detach());
    CHECK(zero.item() == 0.0);
    CHECK(vq_loss(q.z_q.detach(), q.z_q.detach()).item() == 0.0);
    CHECK_THROWS_AS(commit_loss(z, Tensor64::zeros({2, 2, 5})), nd::ShapeError);
    CHECK_THROWS_AS(vq_loss(z, Tensor64::zeros({2, 2, 5})), nd::ShapeError);
}

TEST_CASE("commit gradient vanishes when z equals z_q") {
    Tensor64 z({1, 1, 4}, {0.1, 0.2, 0.3, 0.4}, true);
    nd::backward(commit_loss(z, z.detach()));
    for (double g : z.grad()) CHECK(g == 0.0);
}

TEST_CASE("vq gradient: single site, single group") {
    // C_l = 3, K = 4: grad(e_k) = 2 (e_k - z) / C_l for the selected row; others zero.
    Tensor64 table({4, 3}, {0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, -1.0, 0.0, 1.0}, true);
    BasicCodebookSet<double> cb{1, 4, 3, {table}};
    const Tensor64 z({1, 1, 3}, {0.4, 0.7, 0.45});
    const auto q = quantize(z, cb);
    REQUIRE(q.tokens[0].indices[0][0] == 1);
    nd::backward(vq_loss(z, q.z_q));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(table.grad()[3 + j] == doctest::Approx(2.0 * (0.5 - z.data()[j]) / 3.0));
        CHECK(table.grad()[j] == 0.0);
        CHECK(table.grad()[6 + j] == 0.0);
        CHECK(table.grad()[9 + j] == 0.0);
    }
}

TEST_CASE("every loss passes finite differences") {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(40 + seed);
        // |a - b| >= 0.05 keeps the Charbonnier curvature (~1/eps near zero) away from the stencil.
        const auto a = uniform_tensor<double>({4, 4, 3}, rng);
        Tensor64 b = a.clone();
        for (auto& v : b.mutable_data()) v += (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 0.5);
        const double eps = 1e-3;
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return charbonnier(t, b, eps); }, a, 1e-3) < 1e-3);
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return charbonnier(a, t, eps); }, b, 1e-3) < 1e-3);
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return l2_loss(t, b); }, a, 1e-3) < 1e-3);
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return l2_loss(a, t); }, b, 1e-3) < 1e-3);
        // commit: gradient w.r.t. z; vq: gradient w.r.t. z_q (a codebook-derived tensor)
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return commit_loss(t, b); }, a, 1e-3) < 1e-3);
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return vq_loss(a, t); }, b, 1e-3) < 1e-3);
        const LossWeights w;
        CHECK(nd::grad_check<double>([&](const Tensor64& t) { return total_loss(t, b, a, b, w).total; }, a, 1e-3) < 1e-3);
    }
}

TEST_CASE("total loss") {
    Rng rng(3);
    SUBCASE("perfect reconstruction leaves only the Charbonnier floor") {
        const auto x = uniform_tensor({4, 4, 3}, rng), z = uniform_tensor({2, 2, 4}, rng);
        const LossWeights w;
        const auto r = total_loss(x, x, z, z, w);
        CHECK(r.parts.total == doctest::Approx(w.charbonnier * w.epsilon).epsilon(1e-6));
        CHECK(r.parts.gan == 0.0);
        CHECK(r.parts.perceptual == 0.0);
    }
    SUBCASE("all-zero weights give zero") {
        const auto x = uniform_tensor({4, 4, 3}, rng), y = uniform_tensor({4, 4, 3}, rng);
        const auto z = uniform_tensor({2, 2, 4}, rng), zq = uniform_tensor({2, 2, 4}, rng);
        LossWeights w{0, 0, 0, 0, 0, 0, 1e-3};
        CHECK(total_loss(x, y, z, zq, w).parts.total == 0.0);
    }
    SUBCASE("negative weights are rejected") {
        const auto x = uniform_tensor({4, 4, 3}, rng);
        LossWeights w;
        w.commit = -0.1;
        CHECK_THROWS(total_loss(x, x, x, x, w));
    }
    SUBCASE("weighted sum matches recomputation for 50 random weight vectors, hooks included") {
        BasicLossHooks<float> hooks;
        hooks.gan = [](const Tensor& r, const Tensor&) { return nd::mean(r); };
        hooks.perceptual = [](const Tensor& r, const Tensor& t) { return nd::mean(nd::square(nd::sub(r, t))); };
        for (int trial = 0; trial < 50; ++trial) {
            const auto x = uniform_tensor({4, 4, 3}, rng), y = uniform_tensor({4, 4, 3}, rng);
            const auto z = uniform_tensor({2, 2, 4}, rng, -1, 1), zq = uniform_tensor({2, 2, 4}, rng, -1, 1);
            LossWeights w{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3),
                          rng.uniform(0, 3), rng.uniform(1e-4, 1e-2)};
            const auto r = total_loss(x, y, z, zq, w, hooks);
            CHECK(std::abs(r.parts.total - weighted(r.parts, w)) <= 1e-6 * std::abs(weighted(r.parts, w)));
            CHECK(r.parts.l2 == doctest::Approx(two_loop_mse(x, y)).epsilon(1e-6));
        }
    }
}

TEST_CASE("psnr") {
    Rng rng(4);
    const auto a = uniform_tensor({8, 8, 3}, rng), b = uniform_tensor({8, 8, 3}, rng);
    CHECK(psnr(a, a) == 99.0);
    CHECK(psnr(constant({4, 4, 3}, 0.0f), constant({4, 4, 3}, 1.0f)) == 0.0);
    CHECK(psnr(constant({4, 4, 3}, 0.75f), constant({4, 4, 3}, 0.25f)) == doctest::Approx(6.0206).epsilon(1e-5));
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / two_loop_mse(a, b))));
    CHECK_THROWS_AS(psnr(a, constant({8, 4, 3}, 0.0f)), nd::ShapeError);
}

TEST_CASE("ssim") {
    Rng rng(5);
    const auto a = uniform_tensor({16, 24, 3}, rng), b = uniform_tensor({16, 24, 3}, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0));
    CHECK(ssim(constant({8, 8, 3}, 0.3f), constant({8, 8, 3}, 0.3f)) == doctest::Approx(1.0));
    const double expect = (2 * 0.5 * 0.0 + 1e-4) / (0.25 + 1e-4);
    CHECK(ssim(constant({8, 8, 3}, 0.5f), constant({8, 8, 3}, 0.0f)) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(ssim(a, b) == ssim(b, a));
    const double s = ssim(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK_THROWS_AS(ssim(constant({7, 8, 3}, 0.0f), constant({7, 8, 3}, 0.0f)), nd::ShapeError);
}
