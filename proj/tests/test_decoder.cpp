#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/errors.hpp"

using namespace ovseg;
using namespace testing;

namespace {

struct Fixture {
    ParamStore store;
    Rng rng{31};
    DecoderParams params;

    Fixture(int patch, int64_t corr, int64_t spe, int64_t w1 = 8, int64_t w2 = 4) {
        DecoderConfig c;
        c.patch_size = patch;
        c.corr_dim = corr;
        c.spe_dim = spe;
        c.width1 = w1;
        c.width2 = w2;
        params = DecoderParams(LayerCtx{store, rng, ParamGroup::Head, "dec."}, c);
    }
};

GuidancePyramid random_guidance(int64_t c, int64_t h, int64_t w, Rng& rng) {
    return {make_feature_map(random_tensor({c, h, w}, rng)), make_feature_map(random_tensor({c, h, w}, rng)),
            make_feature_map(random_tensor({c, h, w}, rng))};
}

}  // namespace

TEST_CASE("transposed 2x2 conv matches its definition") {
    Fixture f(8, 3, 4);
    Rng rng(1);
    const auto x = random_tensor({2, 3, 2, 3}, rng);
    const auto& up = f.params.up1;  // 3 -> 8 channels
    const auto y = transposed_conv2x2(x, up);
    REQUIRE(y.shape() == Shape{2, 8, 4, 6});
    for (int64_t o : {0, 5})
        for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
                double ref = up.bias.at({o * 4 + dy * 2 + dx});
                for (int64_t c = 0; c < 3; ++c) ref += up.weight.at({o * 4 + dy * 2 + dx, c}) * x.at({1, c, 1, 2});
                CHECK(y.at({1, o, 2 + dy, 4 + dx}) == doctest::Approx(ref).epsilon(1e-12));
            }
}

TEST_CASE("decode: 24x24 grid with patch 16 gives 384x384 logits") {
    Fixture f(16, 32, 64, 32, 16);
    Rng rng(2);
    const auto logits = decode(CorrelationVolume{random_tensor({5, 32, 24, 24}, rng)}, random_guidance(64, 24, 24, rng),
                               f.params);
    CHECK(logits.data.shape() == Shape{5, 384, 384});
    for (double v : logits.data.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("decode: class equivariance and scale checks") {
    Fixture f(8, 4, 6);
    Rng rng(3);
    const CorrelationVolume corr{random_tensor({4, 4, 3, 5}, rng)};
    const auto g = random_guidance(6, 3, 5, rng);
    const auto out = decode(corr, g, f.params);
    CHECK(out.data.shape() == Shape{4, 24, 40});
    const auto perm = permutation(4, rng);
    CHECK(max_abs_diff(decode(CorrelationVolume{permute_rows(corr.data, perm)}, g, f.params).data,
                       permute_rows(out.data, perm)) <= 1e-12);
    CHECK_THROWS_AS(decode(corr, random_guidance(6, 4, 5, rng), f.params), ShapeError);
    CHECK_THROWS_AS(decode(CorrelationVolume{random_tensor({4, 3, 3, 5}, rng)}, g, f.params), ShapeError);
}

TEST_CASE("decoder gradient check (N=2, 4x4 base)") {
    Fixture f(8, 4, 6, 4, 2);
    Rng rng(4);
    const auto g = random_guidance(6, 4, 4, rng);
    const auto& p = f.params;
    const auto result = gradcheck(
        [&](const std::vector<Tensor>& in) {
            auto q = p;
            q.fuse1_g.weight = in[1];
            q.up2.weight = in[2];
            q.head.weight = in[3];
            auto guide = g;
            guide.f15 = make_feature_map(in[4]);
            return probe(decode(CorrelationVolume{in[0]}, guide, q).data);
        },
        {random_tensor({2, 4, 4, 4}, rng), p.fuse1_g.weight.clone(), p.up2.weight.clone(), p.head.weight.clone(),
         g.f15.data.clone()});
    CHECK(result.rel_error <= 1e-4);
}

TEST_CASE("predict: dominance, ties and brute-force argmax") {
    std::vector<double> v(3 * 2 * 2, 0.0);
    for (int i = 0; i < 4; ++i) v[static_cast<size_t>(2 * 4 + i)] = 5.0;
    const auto dom = predict(LogitMap{Tensor::from({3, 2, 2}, v)});
    for (auto l : dom.labels) CHECK(l == 2);
    const auto tie = predict(LogitMap{Tensor::full({3, 2, 2}, 0.25)});
    for (auto l : tie.labels) CHECK(l == 0);

    Rng rng(5);
    const auto logits = random_tensor({3, 8, 8}, rng, -40.0, 40.0);
    const auto m = predict(LogitMap{logits});
    CHECK(m.height == 8);
    CHECK(m.width == 8);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x) {
            int32_t best = 0;
            for (int32_t c = 1; c < 3; ++c)
                if (logits.at({c, y, x}) > logits.at({best, y, x})) best = c;
            CHECK(m.at(y, x) == best);
        }
    const auto extreme = predict(LogitMap{Tensor::from({2, 1, 1}, {-800.0, 800.0})});
    for (double p : extreme.probs.data()) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}
