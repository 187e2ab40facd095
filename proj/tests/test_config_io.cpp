#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/checkpoint.hpp"
#include "ovseg/config.hpp"
#include "ovseg/image_io.hpp"
#include "ovseg/tensor_io.hpp"
#include "ovseg/training.hpp"

using namespace ovseg;
using namespace testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ovseg_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

// Small architecture expressed as a run config.
RunConfig tiny_run_config() {
    auto c = preset("desk");
    c.model = tiny_model_config();
    c.train.crop = 64;
    c.data.size = 64;
    c.infer = LgaConfig{64, 32, 16, true, false};
    return c;
}

}  // namespace

TEST_CASE("presets: desk defaults and full-scale preset values") {
    const auto desk = preset("desk");
    CHECK(desk.train.lr_backbone == 1e-4);
    CHECK(desk.train.lr_head == 2e-4);
    CHECK(desk.train.iters == 2000);
    CHECK(desk.train.batch == 4);
    CHECK(desk.train.crop == 384);
    const auto paper = preset("paper");
    CHECK(paper.train.lr_backbone == 2e-6);
    CHECK(paper.train.lr_head == 2e-4);
    CHECK(paper.train.iters == 80000);
    CHECK(paper.train.loss.lambda == 0.05);
    CHECK(paper.train.loss.gamma == 2.0);
    CHECK(paper.infer.resize == 640);
    CHECK(paper.infer.window == 384);
    CHECK(paper.infer.overlap == 128);
    CHECK(paper.eval.threshold == 0.9);
    CHECK_NOTHROW(desk.validate());
    CHECK_NOTHROW(paper.validate());
    CHECK_THROWS_AS(preset("huge"), ConfigError);
}

TEST_CASE("config parsing: round trip, strict keys with line anchors, overrides") {
    const auto desk = preset("desk");
    const auto round = parse_config(to_json(desk).dump(2));
    CHECK(to_json(round) == to_json(desk));

    const auto msg = error_of([] { parse_config("{\n \"train\": {\n  \"iters\": 5,\n  \"bogus\": 1\n }\n}"); });
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("train.bogus") != std::string::npos);
    CHECK_THROWS_AS(parse_config("{\"train\": {\"iters\": \"many\"}}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"train\": "), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"infer\": {\"overlap\": 400}}"), ConfigError);

    const auto partial = parse_config("{\"preset\": \"paper\", \"train\": {\"iters\": 7}}");
    CHECK(partial.train.iters == 7);
    CHECK(partial.train.lr_backbone == 2e-6);

    const auto o = parse_config("{}", {{"train.iters", "12"}, {"train.toggles.early_refine", "false"}, {"seed", "9"},
                                       {"model.vision_arch", "linear"}});
    CHECK(o.train.iters == 12);
    CHECK_FALSE(o.train.toggles.early_refine);
    CHECK_FALSE(o.model_config().early_refine);
    CHECK(o.model_config().seed == 9);
    CHECK(o.model.encoder.vision_arch == VisionArch::Linear);
    CHECK_THROWS_AS(parse_config("{}", {{"train.nope", "1"}}), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", {{"model.spatial_window", "5"}}), ConfigError);
}

TEST_CASE("tensor format round trip and corruption") {
    Rng rng(1);
    const auto t = random_tensor({2, 3, 4}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    CHECK(ss.str().substr(0, 4) == "OVSG");
    CHECK(ss.str().size() == 4 + 4 + 4 + 3 * 4 + 24 * 4);
    const auto back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(max_abs_diff(back, t) <= 1e-7);

    std::stringstream bad("NOPE....");
    CHECK_THROWS_AS(read_tensor(bad), FormatError);
    std::stringstream cut;
    write_tensor(cut, t);
    std::stringstream short_stream(cut.str().substr(0, cut.str().size() - 5));
    CHECK_THROWS_AS(read_tensor(short_stream), FormatError);

    const auto dir = scratch_dir("tensor");
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    save_embeddings((dir / "e.ovsg").string(), m, {"cat", "dog"});
    CHECK(fs::exists(dir / "e.ovsg.json"));
    const auto [mm, names] = load_embeddings((dir / "e.ovsg").string());
    CHECK(names == std::vector<std::string>{"cat", "dog"});
    CHECK(mm.isApprox(m));
    CHECK_THROWS(load_tensor((dir / "missing.ovsg").string()));
}

TEST_CASE("checkpoint round trip and mismatch") {
    const auto dir = scratch_dir("ckpt");
    auto cfg = tiny_run_config();
    SegmentationModel model(cfg.model_config());
    save_checkpoint(dir.string(), model, cfg, 17);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "weights.ovsg"));
    const auto loaded = load_checkpoint(dir.string());
    CHECK(loaded.iteration == 17);
    CHECK(to_json(loaded.config) == to_json(cfg));
    const auto& a = model.params().params();
    const auto& b = loaded.model->params().params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        // float32 storage
        CHECK(max_abs_diff(a[i].tensor, b[i].tensor) <= 1e-6);
    }
    auto other = cfg;
    other.model.corr_dim = 16;
    CHECK_THROWS_AS(load_checkpoint(dir.string(), other), CheckpointError);
    other = cfg;
    other.model.late_stages = 3;
    CHECK_THROWS_AS(load_checkpoint(dir.string(), other), CheckpointError);
    CHECK_THROWS(load_checkpoint((dir / "nowhere").string()));
}

TEST_CASE("PNG round trips") {
    const auto dir = scratch_dir("png");
    Rng rng(2);
    const auto img = random_image(12, 20, rng);
    write_png((dir / "a.png").string(), img);
    const auto back = read_png((dir / "a.png").string());
    CHECK(back.data.shape() == img.data.shape());
    CHECK(max_abs_diff(back.data, img.data) <= 0.5 / 255.0 + 1e-12);

    const auto scene = generate_scene(3, 4, 64);
    write_label_png((dir / "m.png").string(), scene.mask);
    const auto m = read_label_png((dir / "m.png").string());
    CHECK(m.labels == scene.mask.labels);
    write_color_png((dir / "c.png").string(), scene.mask);
    const auto c = read_png((dir / "c.png").string());
    const auto col = class_color(scene.mask.at(0, 0));
    CHECK(c.data.at({0, 0, 0}) == doctest::Approx(col[0] / 255.0));
    CHECK(class_color(255) == std::array<uint8_t, 3>{0, 0, 0});
    CHECK(class_color(1) != class_color(2));
    CHECK_THROWS_AS(read_png((dir / "none.png").string()), ImageIoError);
    std::ofstream((dir / "junk.png").string()) << "not a png";
    CHECK_THROWS_AS(read_png((dir / "junk.png").string()), ImageIoError);
}
