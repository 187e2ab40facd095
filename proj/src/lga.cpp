#include "ovseg/lga.hpp"

#include "ovseg/errors.hpp"

namespace ovseg {

void LgaConfig::validate() const {
    if (overlap < 0) throw ConfigError("infer.overlap must be >= 0");
    if (overlap >= window)
        throw ConfigError("infer.overlap (" + std::to_string(overlap) + ") must be smaller than infer.window (" +
                          std::to_string(window) + ")");
    if (window > resize)
        throw ConfigError("infer.window (" + std::to_string(window) + ") must not exceed infer.resize (" +
                          std::to_string(resize) + ")");
}

std::vector<int64_t> axis_origins(int64_t size, int64_t window, int64_t stride) {
    if (window > size) throw ConfigError("tile window larger than the image");
    if (stride < 1) throw ConfigError("tile stride must be positive");
    std::vector<int64_t> out;
    int64_t p = 0;
    while (true) {
        out.push_back(p);
        if (p + window >= size) break;
        p += stride;
        if (p + window > size) p = size - window;
    }
    return out;
}

TilePlan plan_tiles(int64_t height, int64_t width, int64_t window, int64_t overlap) {
    if (overlap < 0 || overlap >= window)
        throw ConfigError("tile overlap " + std::to_string(overlap) + " must be in [0, window=" +
                          std::to_string(window) + ")");
    TilePlan plan{height, width, window, overlap, window - overlap, {}};
    const auto rows = axis_origins(height, window, plan.stride);
    const auto cols = axis_origins(width, window, plan.stride);
    for (const auto r : rows)
        for (const auto c : cols) plan.origins.push_back({r, c});
    return plan;
}

TilePlan plan_tiles(const LgaConfig& cfg) {
    cfg.validate();
    return plan_tiles(cfg.resize, cfg.resize, cfg.window, cfg.overlap);
}

FeatureMap merge_tiles(const std::vector<std::pair<TileOrigin, FeatureMap>>& tiles, const TilePlan& plan,
                       int patch) {
    if (tiles.empty()) throw ArgumentError("merge_tiles: no tiles");
    if (plan.height % patch != 0 || plan.width % patch != 0)
        throw AlignmentError("merge_tiles: image size is not a multiple of the patch size");
    const int64_t gh = plan.height / patch, gw = plan.width / patch;
    const int64_t C = tiles.front().second.channels();
    std::vector<double> acc(static_cast<size_t>(C * gh * gw), 0.0);
    std::vector<int64_t> count(static_cast<size_t>(gh * gw), 0);
    for (const auto& [origin, fm] : tiles) {
        if (origin.row % patch != 0 || origin.col % patch != 0)
            throw AlignmentError("merge_tiles: tile origin (" + std::to_string(origin.row) + ", " +
                                 std::to_string(origin.col) + ") is not divisible by patch size " +
                                 std::to_string(patch));
        if (fm.channels() != C) throw ShapeError("merge_tiles: tile channel counts differ");
        const int64_t r0 = origin.row / patch, c0 = origin.col / patch;
        const int64_t th = fm.height(), tw = fm.width();
        if (r0 + th > gh || c0 + tw > gw) throw ShapeError("merge_tiles: tile extends past the image");
        const auto v = fm.data.data();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < th; ++y)
                for (int64_t x = 0; x < tw; ++x) {
                    const auto cell = static_cast<size_t>((r0 + y) * gw + c0 + x);
                    auto& m = acc[static_cast<size_t>(c * gh * gw) + cell];
                    // Running mean: identical contributions reproduce the value exactly.
                    m += (v[static_cast<size_t>((c * th + y) * tw + x)] - m) / static_cast<double>(count[cell] + 1);
                }
        for (int64_t y = 0; y < th; ++y)
            for (int64_t x = 0; x < tw; ++x) ++count[static_cast<size_t>((r0 + y) * gw + c0 + x)];
    }
    for (const auto n : count)
        if (n == 0) throw ArgumentError("merge_tiles: tiles leave a cell uncovered");
    return make_feature_map(Tensor::from({C, gh, gw}, std::move(acc)));
}

ImageTensor crop_image(const ImageTensor& image, int64_t row, int64_t col, int64_t h, int64_t w) {
    return make_image(narrow(narrow(image.data, 1, row, h), 2, col, w));
}

ImageTensor resize_image(const ImageTensor& image, int64_t height, int64_t width) {
    if (image.height() == height && image.width() == width) return image;
    return make_image(resize_bilinear(image.data, height, width));
}

namespace {

TilePlan image_plan(const ImageTensor& image, const LgaConfig& cfg) {
    cfg.validate();
    return plan_tiles(image.height(), image.width(), cfg.window, cfg.overlap);
}

}  // namespace

FeatureMap lga_features(const ImageTensor& image, const VisionEncoder& encoder, const LgaConfig& cfg) {
    const auto global = encoder(image).second;
    if (!cfg.lga_vlm) return global;
    const auto plan = image_plan(image, cfg);
    std::vector<std::pair<TileOrigin, FeatureMap>> tiles;
    for (const auto& o : plan.origins)
        tiles.emplace_back(o, encoder(crop_image(image, o.row, o.col, plan.window, plan.window)).second);
    const auto local = merge_tiles(tiles, plan, encoder.config().patch_size);
    return make_feature_map(scale(add(local.data, global.data), 0.5));
}

GuidancePyramid lga_guidance(const ImageTensor& image, const SemanticPriorEncoder& encoder, const LgaConfig& cfg) {
    if (!cfg.lga_spe) return encoder(image);
    const auto plan = image_plan(image, cfg);
    std::vector<std::pair<TileOrigin, FeatureMap>> f7, f15, fL;
    for (const auto& o : plan.origins) {
        auto g = encoder(crop_image(image, o.row, o.col, plan.window, plan.window));
        f7.emplace_back(o, std::move(g.f7));
        f15.emplace_back(o, std::move(g.f15));
        fL.emplace_back(o, std::move(g.fL));
    }
    const int patch = static_cast<int>(plan.window / f7.front().second.height());
    return {merge_tiles(f7, plan, patch), merge_tiles(f15, plan, patch), merge_tiles(fL, plan, patch)};
}

InferenceResult infer_logits(const ImageTensor& image, const SegmentationModel& model,
                             const std::vector<std::string>& class_names, const LgaConfig& cfg) {
    if (class_names.empty()) throw ArgumentError("infer: class list is empty");
    cfg.validate();
    NoGradGuard no_grad;
    const auto resized = resize_image(image, cfg.resize, cfg.resize);
    const auto texts = model.encode_text(class_names);
    const auto phi = lga_features(resized, model.vision, cfg);
    const auto guidance = lga_guidance(resized, model.spe, cfg);
    InferenceResult out;
    out.logits = model.head(resized, phi, guidance, texts);
    out.segmap = predict(out.logits);
    return out;
}

SegMap infer(const ImageTensor& image, const SegmentationModel& model, const std::vector<std::string>& class_names,
             const LgaConfig& cfg) {
    return infer_logits(image, model, class_names, cfg).segmap;
}

}  // namespace ovseg
