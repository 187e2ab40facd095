#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/errors.hpp"

using namespace ovseg;
using namespace testing;

namespace {

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops broadcast and differentiate") {
    Rng rng(1);
    const auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 1}, rng);
    CHECK(add(a, b).shape() == Shape{2, 3, 4});
    CHECK(add(a, b).at({1, 2, 3}) == doctest::Approx(a.at({1, 2, 3}) + b.at({2, 0})));
    CHECK(gradcheck([](const auto& x) { return probe(x[0] + x[1]); }, {a, b}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& x) { return probe(x[0] - x[1]); }, {a, b}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& x) { return probe(x[0] * x[1]); }, {a, b}).rel_error < kGradTol);
    const auto pos = random_tensor({3, 1}, rng, 0.5, 2.0);
    CHECK(gradcheck([](const auto& x) { return probe(div(x[0], x[1])); }, {a, pos}).rel_error < kGradTol);
    CHECK_THROWS_AS(add(a, random_tensor({5}, rng)), ShapeError);
}

TEST_CASE("unary ops match their closed forms and gradients") {
    Rng rng(2);
    const auto x = random_tensor({5, 3}, rng, -2.0, 2.0);
    CHECK(sigmoid(x).at({1, 1}) == doctest::Approx(1.0 / (1.0 + std::exp(-x.at({1, 1})))));
    CHECK(gelu(x).at({0, 0}) ==
          doctest::Approx(0.5 * x.at({0, 0}) * (1.0 + std::erf(x.at({0, 0}) / std::sqrt(2.0)))));
    for (auto op : {+[](const Tensor& t) { return exp(t); }, +[](const Tensor& t) { return sigmoid(t); },
                    +[](const Tensor& t) { return tanh(t); }, +[](const Tensor& t) { return gelu(t); },
                    +[](const Tensor& t) { return scale(t, -1.5); }, +[](const Tensor& t) { return add_scalar(t, 0.3); }})
        CHECK(gradcheck([op](const auto& in) { return probe(op(in[0])); }, {x}).rel_error < kGradTol);
    const auto p = random_tensor({4}, rng, 0.5, 2.0);
    CHECK(gradcheck([](const auto& in) { return probe(log(in[0])); }, {p}).rel_error < kGradTol);
}

TEST_CASE("reductions and layout ops") {
    Rng rng(3);
    const auto x = random_tensor({2, 3, 4}, rng);
    CHECK(sum_axis(x, 1).shape() == Shape{2, 4});
    CHECK(mean_axis(x, -1).at({1, 2}) ==
          doctest::Approx((x.at({1, 2, 0}) + x.at({1, 2, 1}) + x.at({1, 2, 2}) + x.at({1, 2, 3})) / 4));
    CHECK(permute(x, {2, 0, 1}).at({3, 1, 2}) == x.at({1, 2, 3}));
    CHECK(reshape(x, {6, -1}).shape() == Shape{6, 4});
    CHECK(concat({x, x}, 1).shape() == Shape{2, 6, 4});
    CHECK(narrow(x, 2, 1, 2).at({0, 0, 0}) == x.at({0, 0, 1}));
    CHECK(gradcheck([](const auto& in) { return probe(sum_axis(in[0], 1)); }, {x}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& in) { return probe(mean_axis(in[0], 0)); }, {x}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& in) { return probe(permute(in[0], {1, 2, 0})); }, {x}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& in) { return probe(concat({in[0], scale(in[0], 2.0)}, 2)); }, {x}).rel_error <
          kGradTol);
    CHECK(gradcheck([](const auto& in) { return probe(narrow(in[0], 1, 1, 2)); }, {x}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& in) { return mean(in[0]); }, {x}).rel_error < kGradTol);
}

TEST_CASE("matmul, linear and softmax") {
    Rng rng(4);
    const auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), bt = random_tensor({2, 5, 4}, rng);
    const auto y = matmul(a, b);
    double ref = 0;
    for (int64_t k = 0; k < 4; ++k) ref += a.at({1, 2, k}) * b.at({k, 3});
    CHECK(y.at({1, 2, 3}) == doctest::Approx(ref));
    CHECK(gradcheck([](const auto& in) { return probe(matmul(in[0], in[1])); }, {a, b}).rel_error < kGradTol);
    CHECK(gradcheck([](const auto& in) { return probe(matmul(in[0], in[1], true)); }, {a, bt}).rel_error < kGradTol);
    const auto w = random_tensor({6, 4}, rng), bias = random_tensor({6}, rng);
    CHECK(gradcheck([](const auto& in) { return probe(linear(in[0], in[1], in[2])); }, {a, w, bias}).rel_error <
          kGradTol);
    const auto s = softmax(a);
    for (int64_t i = 0; i < 3; ++i) {
        double row = 0;
        for (int64_t k = 0; k < 4; ++k) row += s.at({0, i, k});
        CHECK(row == doctest::Approx(1.0));
    }
    CHECK(gradcheck([](const auto& in) { return probe(softmax(in[0])); }, {a}).rel_error < kGradTol);
}

TEST_CASE("layer norm normalizes and differentiates") {
    Rng rng(5);
    const auto x = random_tensor({3, 8}, rng, -3.0, 3.0);
    const auto g = Tensor::full({8}, 1.0), b = Tensor::zeros({8});
    const auto y = layer_norm(x, g, b);
    double m = 0, v = 0;
    for (int64_t k = 0; k < 8; ++k) m += y.at({1, k}) / 8;
    for (int64_t k = 0; k < 8; ++k) v += (y.at({1, k}) - m) * (y.at({1, k}) - m) / 8;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(gradcheck([](const auto& in) { return probe(layer_norm(in[0], in[1], in[2])); },
                    {x, random_tensor({8}, rng), random_tensor({8}, rng)})
              .rel_error < kGradTol);
}

TEST_CASE("conv2d matches a direct loop and differentiates") {
    Rng rng(6);
    const auto x = random_tensor({2, 3, 5, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    const auto y = conv2d(x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{2, 4, 3, 3});
    // Direct evaluation at one output location.
    double ref = b.at({2});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t ky = 0; ky < 3; ++ky)
            for (int64_t kx = 0; kx < 3; ++kx) {
                const int64_t iy = 1 * 2 - 1 + ky, ix = 2 * 2 - 1 + kx;
                if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5) ref += w.at({2, c, ky, kx}) * x.at({1, c, iy, ix});
            }
    CHECK(y.at({1, 2, 1, 2}) == doctest::Approx(ref));
    CHECK(gradcheck([](const auto& in) { return probe(conv2d(in[0], in[1], in[2], 2, 1)); }, {x, w, b}).rel_error <
          kGradTol);
}

TEST_CASE("bilinear resize uses half-pixel centers") {
    const auto x = Tensor::from({1, 1, 2}, {0.0, 1.0});
    const auto y = resize_bilinear(x, 1, 4);
    // Source coords (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25 (clamped).
    CHECK(y.at({0, 0, 0}) == doctest::Approx(0.0));
    CHECK(y.at({0, 0, 1}) == doctest::Approx(0.25));
    CHECK(y.at({0, 0, 2}) == doctest::Approx(0.75));
    CHECK(y.at({0, 0, 3}) == doctest::Approx(1.0));
    Rng rng(7);
    const auto z = random_tensor({2, 3, 3}, rng);
    CHECK(bitwise_equal(resize_bilinear(z, 3, 3), z));
    CHECK(gradcheck([](const auto& in) { return probe(resize_bilinear(in[0], 5, 7)); }, {z}).rel_error < kGradTol);
}

TEST_CASE("l2_normalize maps tiny vectors to zero") {
    const auto x = Tensor::from({2, 2}, {3.0, 4.0, 0.0, 0.0});
    const auto y = l2_normalize(x);
    CHECK(y.at({0, 0}) == doctest::Approx(0.6));
    CHECK(y.at({1, 0}) == 0.0);
    CHECK(y.at({1, 1}) == 0.0);
    Rng rng(8);
    CHECK(gradcheck([](const auto& in) { return probe(l2_normalize(in[0])); }, {random_tensor({3, 5}, rng)})
              .rel_error < kGradTol);
}

TEST_CASE("rope2d: identity at origin, isometry, relative positions") {
    Rng rng(9);
    const int64_t D = 12;
    const auto q = random_tensor({1, D}, rng), k = random_tensor({1, D}, rng);
    CHECK(max_abs_diff(rope2d(q, {0}, {0}), q) == 0.0);
    const auto dot = [](const Tensor& a, const Tensor& b) {
        double s = 0;
        for (size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
        return s;
    };
    const auto r = rope2d(q, {3}, {-2});
    CHECK(std::sqrt(dot(r, r)) == doctest::Approx(std::sqrt(dot(q, q))).epsilon(1e-12));
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t py = static_cast<int64_t>(rng.below(20)), px = static_cast<int64_t>(rng.below(20));
        const int64_t ky = static_cast<int64_t>(rng.below(20)), kx = static_cast<int64_t>(rng.below(20));
        const int64_t dy = static_cast<int64_t>(rng.below(41)) - 20, dx = static_cast<int64_t>(rng.below(41)) - 20;
        const double base = dot(rope2d(q, {py}, {px}), rope2d(k, {ky}, {kx}));
        const double shifted = dot(rope2d(q, {py + dy}, {px + dx}), rope2d(k, {ky + dy}, {kx + dx}));
        CHECK(std::abs(base - shifted) <= 1e-6);
    }
    CHECK(gradcheck([](const auto& in) { return probe(rope2d(in[0], {1, 2}, {3, 0})); }, {random_tensor({2, 8}, rng)})
              .rel_error < kGradTol);
}

TEST_CASE("gather treats negative indices as zero padding") {
    const auto x = Tensor::from({3}, {1.0, 2.0, 3.0});
    const auto y = gather(x, std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{2, -1, 0}), {3});
    CHECK(y.at({0}) == 3.0);
    CHECK(y.at({1}) == 0.0);
    CHECK(y.at({2}) == 1.0);
}

TEST_CASE("no-grad mode records no history") {
    auto x = Tensor::full({2}, 1.0, true);
    {
        NoGradGuard ng;
        CHECK_FALSE(exp(x).requires_grad());
    }
    CHECK(exp(x).requires_grad());
}
