#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mgvq/ndgrad.hpp"
#include "mgvq/rng.hpp"

using namespace mgvq;
using nd::Tensor;
using nd::Tensor64;

namespace {

Tensor64 random64(nd::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(nd::numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor64(std::move(shape), std::move(v));
}

// Values with |x| in [0.2, 1]: away from the leaky-relu kink.
Tensor64 away_from_zero(nd::Shape shape, Rng& rng) {
    std::vector<double> v(nd::numel(shape));
    for (auto& x : v) x = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    return Tensor64(std::move(shape), std::move(v));
}

// Random linear functional of a tensor: sum(w * t).
Tensor64 probe(const Tensor64& t, const Tensor64& w) { return nd::sum(nd::mul(t, w)); }

constexpr double kTol = 1e-3;
constexpr double kStep = 1e-3;
constexpr int kSeeds = 20;

}  // namespace

TEST_CASE("forward examples") {
    const Tensor a({2}, {1, 2}), b({2}, {3, 4});
    const auto c = nd::add(a, b);
    CHECK(c.data()[0] == 4.0f);
    CHECK(c.data()[1] == 6.0f);

    Rng rng(1);
    std::vector<float> av(9);
    for (auto& x : av) x = static_cast<float>(rng.uniform(-5, 5));
    const Tensor A({3, 3}, av);
    const Tensor I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto IA = nd::matmul(I, A);
    for (std::size_t i = 0; i < 9; ++i) CHECK(IA.data()[i] == A.data()[i]);

    const auto r = nd::leaky_relu(Tensor({2}, {-1, 2}), 0.2);
    CHECK(r.data()[0] == doctest::Approx(-0.2));
    CHECK(r.data()[1] == 2.0f);
}

TEST_CASE("shape errors name the op and both shapes") {
    const Tensor a({2, 3}, std::vector<float>(6, 1)), b({2, 2}, std::vector<float>(4, 1));
    try {
        nd::matmul(a, b);
        FAIL("expected a shape error");
    } catch (const nd::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(nd::add(a, b), nd::ShapeError);
    CHECK_THROWS_AS(nd::slice_channels(a, 2, 4), nd::ShapeError);
    CHECK_THROWS_AS(nd::reshape(a, {5}), nd::ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), nd::ShapeError);
    CHECK_THROWS_AS(Tensor({0}, {}), nd::ShapeError);
}

TEST_CASE("generic forward dispatch matches the named functions") {
    const Tensor a({2, 2}, {1, -2, 3, -4}), b({2, 2}, {0.5f, 1, 1.5f, 2});
    nd::PrimitiveOp op;
    op.kind = nd::OpKind::mul;
    CHECK(nd::forward<float>(op, {a, b}).data()[3] == -8.0f);
    op.kind = nd::OpKind::slice_channel;
    op.begin = 1;
    op.end = 2;
    const auto s = nd::forward<float>(op, {a});
    CHECK(s.shape() == nd::Shape{2, 1});
    CHECK(s.data()[1] == -4.0f);
    op.kind = nd::OpKind::scalar_mul;
    op.scalar = -2.0;
    CHECK(nd::forward<float>(op, {a}).data()[0] == -2.0f);
    op.kind = nd::OpKind::matmul;
    CHECK_THROWS_AS(nd::forward<float>(op, {a}), nd::ShapeError);
}

TEST_CASE("forward is pure") {
    Rng rng(3);
    std::vector<float> v(24);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    const Tensor x({4, 6}, v);
    auto f = [&] { return nd::tanh(nd::sqrt(nd::add_scalar(nd::square(nd::leaky_relu(x)), 1.0))); };
    const auto y1 = f(), y2 = f();
    CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST_CASE("backward examples") {
    SUBCASE("sum gives all ones") {
        Tensor x({2, 3, 2}, std::vector<float>(12, 0.3f), true);
        nd::backward(nd::sum(x));
        for (float g : x.grad()) CHECK(g == 1.0f);
    }
    SUBCASE("mean of squares gives 2v/3") {
        Tensor x({3}, {0.5f, -1.0f, 2.0f}, true);
        nd::backward(nd::mean(nd::square(x)));
        for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i] / 3.0));
    }
    SUBCASE("fan-out accumulates") {
        Tensor x({2, 2}, {1, 2, 3, 4}, true);
        nd::backward(nd::sum(nd::add(x, x)));
        for (float g : x.grad()) CHECK(g == 2.0f);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x({2}, {1, 2}, true);
        CHECK_THROWS_AS(nd::backward(nd::square(x)), nd::ShapeError);
    }
    SUBCASE("repeated backward accumulates into leaves") {
        Tensor x({2}, {1, 2}, true);
        const auto loss = nd::sum(nd::scale(x, 3.0));
        nd::backward(loss);
        nd::backward(loss);
        CHECK(x.grad()[0] == 6.0f);
        x.zero_grad();
        CHECK_FALSE(x.has_grad());
    }
}

TEST_CASE("no-grad guard records no graph") {
    Tensor x({2}, {1, 2}, true);
    {
        nd::NoGradGuard guard;
        CHECK(nd::NoGradGuard::active());
        const auto y = nd::square(x);
        CHECK(y.node() == nullptr);
        CHECK_FALSE(y.tracks());
    }
    CHECK_FALSE(nd::NoGradGuard::active());
    CHECK(nd::square(x).node() != nullptr);
}

TEST_CASE("shared subexpressions match the expanded tree") {
    Rng rng(11);
    const Tensor64 x0 = random64({3, 4}, rng);
    const Tensor64 w = random64({4, 4}, rng);

    auto grads = [&](auto build) {
        Tensor64 x = x0.clone();
        x.set_requires_grad(true);
        nd::backward(build(x));
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    };

    // 1: h = x*W used twice vs computed twice.
    same(grads([&](const Tensor64& x) {
             const auto h = nd::matmul(x, w);
             return nd::sum(nd::mul(h, h));
         }),
         grads([&](const Tensor64& x) { return nd::sum(nd::mul(nd::matmul(x, w), nd::matmul(x, w))); }));

    // 2: diamond through leaky-relu and tanh.
    same(grads([&](const Tensor64& x) {
             const auto h = nd::leaky_relu(x);
             return nd::sum(nd::add(nd::tanh(h), nd::square(h)));
         }),
         grads([&](const Tensor64& x) { return nd::sum(nd::add(nd::tanh(nd::leaky_relu(x)), nd::square(nd::leaky_relu(x)))); }));

    // 3: a slice consumed by concat and by a mean.
    same(grads([&](const Tensor64& x) {
             const auto s = nd::slice_channels(x, 1, 3);
             return nd::add(nd::sum(nd::concat_channels<double>({s, x, s})), nd::mean(nd::square(s)));
         }),
         grads([&](const Tensor64& x) {
             return nd::add(nd::sum(nd::concat_channels<double>({nd::slice_channels(x, 1, 3), x, nd::slice_channels(x, 1, 3)})),
                            nd::mean(nd::square(nd::slice_channels(x, 1, 3))));
         }));
}

TEST_CASE("grad_check examples") {
    Rng rng(5);
    const Tensor64 x = random64({2, 3}, rng);
    CHECK(nd::grad_check<double>([](const Tensor64& t) { return nd::sum(nd::square(t)); }, x, 1e-3) < 1e-4);
    CHECK(nd::grad_check<double>([](const Tensor64&) { return Tensor64::scalar(4.0); }, x, 1e-3) == 0.0);
    const Tensor64 y = away_from_zero({3, 4}, rng);
    CHECK(nd::grad_check<double>([](const Tensor64& t) { return nd::sum(nd::leaky_relu(t)); }, y, 1e-4) < 1e-4);
    CHECK_THROWS_AS(nd::grad_check<double>([](const Tensor64& t) { return nd::square(t); }, x, 1e-3), nd::ShapeError);
    CHECK_THROWS_AS(nd::grad_check<double>([](const Tensor64& t) { return nd::sum(t); }, x, 0.0), std::invalid_argument);
}

TEST_CASE("every primitive passes finite differences over 20 seeds") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        CAPTURE(seed);
        Rng rng(1000 + seed);
        const Tensor64 a = random64({3, 4}, rng), b = random64({3, 4}, rng);
        const Tensor64 m = random64({4, 2}, rng);
        const Tensor64 w34 = random64({3, 4}, rng), w32 = random64({3, 2}, rng), w12 = random64({12}, rng);
        const Tensor64 w36 = random64({3, 6}, rng), w31 = random64({3, 1}, rng);
        const Tensor64 pos = random64({3, 4}, rng, 0.5, 2.0);
        const Tensor64 kinkless = away_from_zero({3, 4}, rng);
        const std::vector<std::uint32_t> idx{0, 5, 5, 11, 2, 7};
        const Tensor64 w6 = random64({6}, rng);

        auto check = [&](std::string name, auto fn, const Tensor64& x) {
            CAPTURE(name);
            CHECK(nd::grad_check<double>(fn, x, kStep) < kTol);
        };
        check("add lhs", [&](const Tensor64& t) { return probe(nd::add(t, b), w34); }, a);
        check("add rhs", [&](const Tensor64& t) { return probe(nd::add(a, t), w34); }, b);
        check("sub lhs", [&](const Tensor64& t) { return probe(nd::sub(t, b), w34); }, a);
        check("sub rhs", [&](const Tensor64& t) { return probe(nd::sub(a, t), w34); }, b);
        check("mul lhs", [&](const Tensor64& t) { return probe(nd::mul(t, b), w34); }, a);
        check("mul rhs", [&](const Tensor64& t) { return probe(nd::mul(a, t), w34); }, b);
        check("matmul lhs", [&](const Tensor64& t) { return probe(nd::matmul(t, m), w32); }, a);
        check("matmul rhs", [&](const Tensor64& t) { return probe(nd::matmul(a, t), w32); }, m);
        check("leaky-relu", [&](const Tensor64& t) { return probe(nd::leaky_relu(t), w34); }, kinkless);
        check("reshape", [&](const Tensor64& t) { return probe(nd::reshape(t, {12}), w12); }, a);
        check("concat", [&](const Tensor64& t) { return probe(nd::concat_channels<double>({nd::slice_channels(t, 0, 2), t}), w36); }, a);
        check("slice", [&](const Tensor64& t) { return probe(nd::slice_channels(t, 1, 2), w31); }, a);
        check("reduce-mean", [&](const Tensor64& t) { return nd::scale(nd::mean(t), 3.7); }, a);
        check("reduce-sum", [&](const Tensor64& t) { return nd::sum(nd::mul(t, w34)); }, a);
        check("square", [&](const Tensor64& t) { return probe(nd::square(t), w34); }, a);
        check("sqrt", [&](const Tensor64& t) { return probe(nd::sqrt(t), w34); }, pos);
        check("scalar-mul", [&](const Tensor64& t) { return probe(nd::scale(t, -1.3), w34); }, a);
        check("add-scalar", [&](const Tensor64& t) { return probe(nd::square(nd::add_scalar(t, 0.4)), w34); }, a);
        check("tanh", [&](const Tensor64& t) { return probe(nd::tanh(t), w34); }, a);
        check("gather", [&](const Tensor64& t) { return probe(nd::gather<double>(t, idx, {6}), w6); }, a);
        // Frozen offset: the substituted value moves with the target exactly as z + sg(z_q - z) does.
        check("substitute", [&](const Tensor64& t) { return probe(nd::square(nd::substitute(nd::add(t, b), t)), w34); }, a);
    }
}

TEST_CASE("substitute copies the value and routes gradient to the target only") {
    Tensor value({2}, {0.25f, -3.0f}, true), target({2}, {1.0f, 2.0f}, true);
    const auto s = nd::substitute(value, target);
    CHECK(std::equal(s.data().begin(), s.data().end(), value.data().begin()));
    nd::backward(nd::sum(nd::square(s)));
    CHECK(target.grad()[0] == 0.5f);
    CHECK(target.grad()[1] == -6.0f);
    CHECK_FALSE(value.has_grad());
}

TEST_CASE("gather scatter-adds repeated indices") {
    Tensor x({3}, {1, 2, 3}, true);
    const std::vector<std::uint32_t> idx{2, 2, 0};
    const auto g = nd::gather(x, std::span<const std::uint32_t>(idx), {3});
    CHECK(g.data()[0] == 3.0f);
    nd::backward(nd::sum(g));
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[2] == 2.0f);
    const std::vector<std::uint32_t> bad{3};
    CHECK_THROWS_AS(nd::gather(x, std::span<const std::uint32_t>(bad), {1}), nd::ShapeError);
}

TEST_CASE("float tensors match double tensors on the forward path") {
    Rng rng(8);
    const Tensor64 a = random64({5, 7}, rng), m = random64({7, 3}, rng);
    const auto d = nd::tanh(nd::matmul(a, m));
    const auto f = nd::tanh(nd::matmul(nd::cast<float>(a), nd::cast<float>(m)));
    for (std::size_t i = 0; i < d.numel(); ++i) CHECK(f.data()[i] == doctest::Approx(d.data()[i]).epsilon(1e-5));
}
