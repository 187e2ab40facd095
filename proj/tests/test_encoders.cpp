#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/errors.hpp"

using namespace ovseg;
using namespace testing;

TEST_CASE("vision encoder shapes follow the patch grid") {
    ModelConfig mc;
    SegmentationModel m(mc);
    Rng rng(1);
    const auto img = random_image(384, 384, rng);
    const auto [cls, phi] = m.vision(img);
    CHECK(cls.data.shape() == Shape{64});
    CHECK(phi.data.shape() == Shape{64, 24, 24});
}

TEST_CASE("640 input yields a 40x40 grid") {
    auto cfg = tiny_model_config();
    cfg.encoder.patch_size = 16;
    SegmentationModel m(cfg);
    Rng rng(2);
    const auto phi = m.vision(random_image(640, 640, rng)).second;
    CHECK(phi.height() == 40);
    CHECK(phi.width() == 40);
}

TEST_CASE("encoders are deterministic for a fixed seed") {
    Rng rng(3);
    const auto img = random_image(32, 48, rng);
    SegmentationModel a(tiny_model_config(11)), b(tiny_model_config(11));
    CHECK(bitwise_equal(a.vision(img).second.data, b.vision(img).second.data));
    CHECK(bitwise_equal(a.vision(img).first.data, b.vision(img).first.data));
    const auto ga = a.spe(img), gb = b.spe(img);
    CHECK(bitwise_equal(ga.fL.data, gb.fL.data));
    CHECK(bitwise_equal(a.encode_text({"cat"}).global, b.encode_text({"cat"}).global));
}

TEST_CASE("non-divisible image names the offending axis") {
    SegmentationModel m(tiny_model_config());
    Rng rng(4);
    try {
        m.vision(random_image(30, 32, rng));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("height") != std::string::npos);
    }
    try {
        m.spe(random_image(32, 36, rng));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("width") != std::string::npos);
    }
}

TEST_CASE("text encoder: shapes, purity and permutation") {
    ModelConfig mc;
    SegmentationModel m(mc);
    const auto one = m.encode_text({"cat"});
    CHECK(one.global.shape() == Shape{1, 64});
    CHECK(one.local.shape() == Shape{1, 64});
    CHECK(one.mean.shape() == Shape{1, 64});

    const auto rep = m.encode_text({"cat", "cat"});
    CHECK(bitwise_equal(narrow(rep.global, 0, 0, 1), narrow(rep.global, 0, 1, 1)));

    const auto ab = m.encode_text({"cat", "dog"}), ba = m.encode_text({"dog", "cat"});
    CHECK(bitwise_equal(narrow(ab.global, 0, 0, 1), narrow(ba.global, 0, 1, 1)));
    CHECK(bitwise_equal(narrow(ab.local, 0, 1, 1), narrow(ba.local, 0, 0, 1)));
    // Batch composition does not matter.
    CHECK(bitwise_equal(narrow(ab.global, 0, 0, 1), one.global));

    for (int64_t c = 0; c < 64; ++c)
        CHECK(ab.mean.at({1, c}) == doctest::Approx((ab.global.at({1, c}) + ab.local.at({1, c})) / 2).epsilon(1e-15));
    CHECK(max_abs_diff(narrow(ab.global, 0, 0, 1), narrow(ab.global, 0, 1, 1)) > 0.0);

    CHECK_THROWS_AS(m.encode_text({}), ArgumentError);
    CHECK_THROWS_AS(m.encode_text({""}), ArgumentError);
}

TEST_CASE("text prompt template is applied") {
    SegmentationModel m(tiny_model_config());
    CHECK(m.text.prompt("cat") == "A photo of a cat in the scene");
    const auto f = m.text.hash_features(m.text.prompt("cat"));
    double n = 0;
    for (double v : f) n += v * v;
    CHECK(n == doctest::Approx(1.0));
}

TEST_CASE("SPE taps share the feature grid and respond to the image") {
    ModelConfig mc;
    SegmentationModel m(mc);
    Rng rng(5);
    const auto g = m.spe(random_image(384, 384, rng));
    for (const auto* f : {&g.f7, &g.f15, &g.fL}) CHECK(f->data.shape() == Shape{64, 24, 24});
    SegmentationModel t(tiny_model_config());
    const auto a = t.spe(random_image(32, 32, rng)).fL, b = t.spe(random_image(32, 32, rng)).fL;
    CHECK(max_abs_diff(a.data, b.data) > 1e-6);
}

TEST_CASE("linear vision arch is translation invariant on the patch grid") {
    auto cfg = tiny_model_config();
    cfg.encoder.vision_arch = VisionArch::Linear;
    SegmentationModel m(cfg);
    Rng rng(6);
    const auto img = random_image(32, 32, rng);
    const auto full = m.vision(img).second;
    // Crop offset by one patch: features equal the matching sub-grid.
    const auto crop = make_image(narrow(narrow(img.data, 1, 8, 16), 2, 8, 24));
    const auto part = m.vision(crop).second;
    CHECK(bitwise_equal(part.data, narrow(narrow(full.data, 1, 1, 2), 2, 1, 3).clone()));
}
