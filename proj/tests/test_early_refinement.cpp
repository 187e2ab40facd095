#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/errors.hpp"

using namespace ovseg;
using namespace testing;

namespace {

struct Fixture {
    ParamStore store;
    Rng rng{17};
    RefinerParams params;

    explicit Fixture(int64_t window = 3, int64_t C = 8) {
        RefinerConfig cfg;
        cfg.patch_size = 8;
        cfg.feature_dim = C;
        cfg.conv_dim = 8;
        cfg.qk_dim = 8;
        cfg.heads = 2;
        cfg.window = window;
        params = RefinerParams(LayerCtx{store, rng, ParamGroup::Backbone, "r."}, cfg);
    }
};

// Output rebuilt as sum_i w_i * phi[i] from the trace.
Tensor recombine(const FeatureMap& phi, const EarlyRefineTrace& tr) {
    const int64_t C = phi.channels(), H = phi.height(), W = phi.width(), S = tr.window_slots;
    std::vector<double> out(static_cast<size_t>(C * H * W), 0.0);
    const auto w = tr.weights.data();
    const auto v = phi.data.data();
    for (size_t i = 0; i < tr.slot_tokens.size(); ++i) {
        const auto tok = tr.slot_tokens[i];
        if (tok < 0) continue;
        const int64_t win = static_cast<int64_t>(i) / S, q = static_cast<int64_t>(i) % S;
        for (int64_t s = 0; s < S; ++s) {
            const auto src = tr.slot_tokens[static_cast<size_t>(win * S + s)];
            const double a = w[static_cast<size_t>((win * S + q) * S + s)];
            if (src < 0) {
                CHECK(a == 0.0);
                continue;
            }
            for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>(c * H * W + tok)] += a * v[static_cast<size_t>(c * H * W + src)];
        }
    }
    return Tensor::from({C, H, W}, std::move(out));
}

}  // namespace

TEST_CASE("early_refine preserves shape and reconstructs from its weights") {
    Fixture f;
    Rng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto img = random_image(40, 56, rng);  // 5x7 grid: clipped border windows
        const auto phi = make_feature_map(random_tensor({8, 5, 7}, rng));
        EarlyRefineTrace tr;
        const auto out = early_refine(img, phi, f.params, &tr);
        CHECK(out.data.shape() == phi.data.shape());
        CHECK(max_abs_diff(out.data, recombine(phi, tr)) <= 1e-12);
        // Rows are convex weights.
        const auto w = tr.weights.data();
        for (size_t i = 0; i < tr.slot_tokens.size(); ++i) {
            if (tr.slot_tokens[i] < 0) continue;
            double s = 0;
            for (int64_t k = 0; k < tr.window_slots; ++k) {
                CHECK(w[i * static_cast<size_t>(tr.window_slots) + static_cast<size_t>(k)] >= 0.0);
                s += w[i * static_cast<size_t>(tr.window_slots) + static_cast<size_t>(k)];
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("constant features stay constant") {
    Fixture f;
    Rng rng(2);
    std::vector<double> v(8 * 4 * 4);
    for (int64_t c = 0; c < 8; ++c)
        for (int64_t i = 0; i < 16; ++i) v[static_cast<size_t>(c * 16 + i)] = 0.1 * static_cast<double>(c) - 0.3;
    const auto phi = make_feature_map(Tensor::from({8, 4, 4}, v));
    const auto out = early_refine(random_image(32, 32, rng), phi, f.params);
    CHECK(max_abs_diff(out.data, phi.data) <= 1e-12);
}

TEST_CASE("window 1 is the identity") {
    Fixture f(1);
    Rng rng(3);
    const auto phi = make_feature_map(random_tensor({8, 3, 4}, rng));
    CHECK(bitwise_equal(early_refine(random_image(24, 32, rng), phi, f.params).data, phi.data));
}

TEST_CASE("grid mismatch and odd rope width are rejected") {
    Fixture f;
    Rng rng(4);
    CHECK_THROWS_AS(early_refine(random_image(32, 32, rng), make_feature_map(random_tensor({8, 3, 4}, rng)), f.params),
                    ShapeError);
    CHECK_THROWS_AS(early_refine(random_image(32, 32, rng), make_feature_map(random_tensor({6, 4, 4}, rng)), f.params),
                    ShapeError);
    CHECK_THROWS_AS(rope_apply(make_feature_map(random_tensor({5, 2, 2}, rng))), ConfigError);
    RefinerConfig bad;
    bad.qk_dim = 6;
    bad.heads = 2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("rope_apply: zero offset identity at origin, isometry, relative shift") {
    Rng rng(5);
    const auto x = make_feature_map(random_tensor({8, 1, 1}, rng));
    CHECK(max_abs_diff(rope_apply(x).data, x.data) == 0.0);
    const auto big = make_feature_map(random_tensor({8, 3, 3}, rng));
    const auto r = rope_apply(big, 2, 5);
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t z = 0; z < 3; ++z) {
            double a = 0, b = 0;
            for (int64_t c = 0; c < 8; ++c) {
                a += big.data.at({c, y, z}) * big.data.at({c, y, z});
                b += r.data.at({c, y, z}) * r.data.at({c, y, z});
            }
            CHECK(b == doctest::Approx(a).epsilon(1e-12));
        }
    const auto q = make_feature_map(random_tensor({8, 1, 1}, rng)), k = make_feature_map(random_tensor({8, 1, 1}, rng));
    auto dot = [](const FeatureMap& a, const FeatureMap& b) {
        double s = 0;
        for (int64_t c = 0; c < a.channels(); ++c) s += a.data.at({c, 0, 0}) * b.data.at({c, 0, 0});
        return s;
    };
    const double base = dot(rope_apply(q, 1, 2), rope_apply(k, 4, 0));
    const double moved = dot(rope_apply(q, 8, -5), rope_apply(k, 11, -7));
    CHECK(std::abs(base - moved) <= 1e-6);
}

TEST_CASE("window partition clips at borders") {
    const auto idx = window_partition_index(2, 3, 2);
    // Two windows side by side; the right one has only column 2.
    REQUIRE(idx.size() == 8);
    CHECK(idx[0] == 0);
    CHECK(idx[3] == 4);
    CHECK(idx[4] == 2);
    CHECK(idx[5] == -1);
    CHECK(idx[6] == 5);
    CHECK(idx[7] == -1);
}

TEST_CASE("early_refine gradient check on an 8x4x4 instance") {
    Fixture f;
    Rng rng(6);
    const auto img = random_image(32, 32, rng);
    const auto phi = random_tensor({8, 4, 4}, rng);
    auto& p = f.params;
    const auto result = gradcheck(
        [&](const std::vector<Tensor>& in) {
            auto params = p;
            params.query.weight = in[1];
            params.key_phi.weight = in[2];
            params.conv2.weight = in[3];
            return probe(early_refine(img, make_feature_map(in[0]), params).data);
        },
        {phi, p.query.weight.clone(), p.key_phi.weight.clone(), p.conv2.weight.clone()});
    CHECK(result.rel_error <= 1e-4);
}
