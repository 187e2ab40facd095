#include "ovseg/encoders.hpp"

#include <cctype>
#include <cmath>

#include "ovseg/errors.hpp"

namespace ovseg {

ImageTensor make_image(Tensor data) {
    if (data.rank() != 3 || data.dim(0) != 3) throw ShapeError("image must be [3, H, W], got " + shape_str(data.shape()));
    if (data.dim(1) < 1 || data.dim(2) < 1) throw ShapeError("image must be non-empty");
    for (double v : data.data())
        if (!std::isfinite(v)) throw ArgumentError("image contains non-finite values");
    return ImageTensor{std::move(data)};
}

FeatureMap make_feature_map(Tensor data) {
    if (data.rank() != 3) throw ShapeError("feature map must be [C, H, W], got " + shape_str(data.shape()));
    return FeatureMap{std::move(data)};
}

void EncoderConfig::validate() const {
    if (patch_size < 4 || patch_size % 4 != 0) throw ConfigError("patch_size must be a positive multiple of 4");
    if (vision_dim < 2 || spe_dim < 2) throw ConfigError("encoder widths must be >= 2");
    if (vision_dim % vision_heads != 0) throw ConfigError("vision_dim must be divisible by vision_heads");
    if (spe_dim % spe_heads != 0) throw ConfigError("spe_dim must be divisible by spe_heads");
    if (text_hash_dim < 1 || text_hidden < 1 || text_ngram < 1) throw ConfigError("text encoder sizes must be positive");
    if (prompt_template.find("{}") == std::string::npos) throw ConfigError("prompt_template needs a {} placeholder");
}

void check_patch_divisible(const ImageTensor& image, int patch) {
    if (image.height() % patch != 0)
        throw ShapeError("image height " + std::to_string(image.height()) + " is not a multiple of patch size " +
                         std::to_string(patch));
    if (image.width() % patch != 0)
        throw ShapeError("image width " + std::to_string(image.width()) + " is not a multiple of patch size " +
                         std::to_string(patch));
}

Tensor extract_patches(const ImageTensor& image, int patch) {
    check_patch_divisible(image, patch);
    const int64_t H = image.height(), W = image.width();
    const int64_t h = H / patch, w = W / patch;
    const int64_t row = 3 * patch * patch;
    auto index = std::make_shared<std::vector<int64_t>>();
    index->reserve(static_cast<size_t>(h * w * row));
    for (int64_t py = 0; py < h; ++py)
        for (int64_t px = 0; px < w; ++px)
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < patch; ++y)
                    for (int64_t x = 0; x < patch; ++x)
                        index->push_back((c * H + py * patch + y) * W + px * patch + x);
    return gather(image.data, std::move(index), {h * w, row});
}

Tensor sincos_positions(int64_t h, int64_t w, int64_t dim) {
    auto t = Tensor::zeros({h * w, dim});
    auto d = t.mutable_data();
    const int64_t q = dim / 4;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double* row = d.data() + (y * w + x) * dim;
            for (int64_t k = 0; k < q; ++k) {
                const double f = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(q));
                row[k] = std::sin(y * f);
                row[q + k] = std::cos(y * f);
                row[2 * q + k] = std::sin(x * f);
                row[3 * q + k] = std::cos(x * f);
            }
        }
    return t;
}

namespace {

// [h*w, C] tokens -> FeatureMap [C, h, w]
FeatureMap tokens_to_map(const Tensor& tokens, int64_t h, int64_t w) {
    return FeatureMap{reshape(permute(tokens, {1, 0}), {tokens.dim(1), h, w})};
}

}  // namespace

VisionEncoder::VisionEncoder(const LayerCtx& ctx, const EncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t in = 3LL * cfg.patch_size * cfg.patch_size;
    patch_embed_ = Linear(ctx.sub("patch_embed"), in, cfg.vision_dim);
    if (cfg.vision_arch == VisionArch::Vit) {
        cls_ = ctx.store.add_uniform(ctx.prefix + "cls", {1, cfg.vision_dim}, ctx.group, 0.02, ctx.rng);
        block_ = TransformerBlock(ctx.sub("block"), cfg.vision_dim, cfg.vision_heads, 2 * cfg.vision_dim);
        norm_ = LayerNorm(ctx.sub("norm"), cfg.vision_dim);
    }
}

std::pair<ClsToken, FeatureMap> VisionEncoder::operator()(const ImageTensor& image) const {
    const auto patches = extract_patches(image, cfg_.patch_size);
    const int64_t h = image.height() / cfg_.patch_size, w = image.width() / cfg_.patch_size;
    auto tokens = patch_embed_(patches);
    if (cfg_.vision_arch == VisionArch::Linear) {
        return {ClsToken{mean_axis(tokens, 0)}, tokens_to_map(tokens, h, w)};
    }
    tokens = add(tokens, sincos_positions(h, w, cfg_.vision_dim));
    auto seq = reshape(concat({cls_, tokens}, 0), {1, h * w + 1, cfg_.vision_dim});
    seq = norm_(block_(seq));
    seq = reshape(seq, {h * w + 1, cfg_.vision_dim});
    return {ClsToken{reshape(narrow(seq, 0, 0, 1), {cfg_.vision_dim})}, tokens_to_map(narrow(seq, 0, 1, h * w), h, w)};
}

TextEncoder::TextEncoder(const LayerCtx& ctx, const EncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    hidden_ = Linear(ctx.sub("hidden"), cfg.text_hash_dim, cfg.text_hidden);
    global_head_ = Linear(ctx.sub("global_head"), cfg.text_hidden, cfg.vision_dim);
    local_head_ = Linear(ctx.sub("local_head"), cfg.text_hidden, cfg.vision_dim);
}

std::string TextEncoder::prompt(const std::string& class_name) const {
    auto p = cfg_.prompt_template;
    p.replace(p.find("{}"), 2, class_name);
    return p;
}

std::vector<double> TextEncoder::hash_features(const std::string& prompt) const {
    std::string s = "^";
    for (char c : prompt) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    s.push_back('$');
    std::vector<double> f(static_cast<size_t>(cfg_.text_hash_dim), 0.0);
    for (int n = 1; n <= cfg_.text_ngram; ++n)
        for (size_t i = 0; i + static_cast<size_t>(n) <= s.size(); ++i) {
            // FNV-1a over (n, gram)
            uint64_t hsh = 1469598103934665603ULL;
            auto mix = [&hsh](unsigned char b) {
                hsh ^= b;
                hsh *= 1099511628211ULL;
            };
            mix(static_cast<unsigned char>(n));
            for (int k = 0; k < n; ++k) mix(static_cast<unsigned char>(s[i + static_cast<size_t>(k)]));
            const auto bucket = static_cast<size_t>(hsh % static_cast<uint64_t>(cfg_.text_hash_dim));
            f[bucket] += (hsh >> 63) ? -1.0 : 1.0;
        }
    double nrm = 0.0;
    for (double v : f) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm > 0)
        for (auto& v : f) v /= nrm;
    return f;
}

TextEmbeddingSet TextEncoder::operator()(const std::vector<std::string>& class_names) const {
    if (class_names.empty()) throw ArgumentError("text_encode: empty class list");
    // Each prompt is encoded on its own so a row never depends on the batch
    // it was requested in (matrix kernels differ with the row count).
    std::vector<Tensor> globals, locals;
    for (const auto& name : class_names) {
        if (name.empty()) throw ArgumentError("text_encode: empty class name");
        const auto x = Tensor::from({1, cfg_.text_hash_dim}, hash_features(prompt(name)));
        const auto hid = gelu(hidden_(x));
        globals.push_back(global_head_(hid));
        locals.push_back(local_head_(hid));
    }
    TextEmbeddingSet out;
    out.class_names = class_names;
    out.global = globals.size() == 1 ? globals.front() : concat(globals, 0);
    out.local = locals.size() == 1 ? locals.front() : concat(locals, 0);
    out.mean = scale(add(out.global, out.local), 0.5);
    return out;
}

SemanticPriorEncoder::SemanticPriorEncoder(const LayerCtx& ctx, const EncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    patch_embed_ = Linear(ctx.sub("patch_embed"), 3LL * cfg.patch_size * cfg.patch_size, cfg.spe_dim);
    for (int i = 0; i < 3; ++i)
        blocks_.emplace_back(ctx.sub("block" + std::to_string(i)), cfg.spe_dim, cfg.spe_heads, 2 * cfg.spe_dim);
}

GuidancePyramid SemanticPriorEncoder::operator()(const ImageTensor& image) const {
    const auto patches = extract_patches(image, cfg_.patch_size);
    const int64_t h = image.height() / cfg_.patch_size, w = image.width() / cfg_.patch_size;
    auto x = add(patch_embed_(patches), sincos_positions(h, w, cfg_.spe_dim));
    x = reshape(x, {1, h * w, cfg_.spe_dim});
    std::vector<FeatureMap> taps;
    for (const auto& blk : blocks_) {
        x = blk(x);
        taps.push_back(tokens_to_map(reshape(x, {h * w, cfg_.spe_dim}), h, w));
    }
    return GuidancePyramid{taps[0], taps[1], taps[2]};
}

std::pair<ClsToken, FeatureMap> vision_encode(const ImageTensor& image, const VisionEncoder& encoder) {
    return encoder(image);
}

TextEmbeddingSet text_encode(const std::vector<std::string>& class_names, const TextEncoder& encoder) {
    return encoder(class_names);
}

GuidancePyramid spe_encode(const ImageTensor& image, const SemanticPriorEncoder& encoder) { return encoder(image); }

}  // namespace ovseg
