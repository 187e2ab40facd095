#include "ovseg/late_refinement.hpp"

#include "ovseg/errors.hpp"

namespace ovseg {

void LateConfig::validate() const {
    if (stages < 1) throw ConfigError("late refinement needs at least one stage");
    if (window < 2) throw ConfigError("spatial window must be >= 2 so the shift is >= 1");
    if (corr_dim % spatial_heads != 0 || corr_dim % class_heads != 0)
        throw ConfigError("corr_dim must be divisible by the attention head counts");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

SpatialRefineParams::SpatialRefineParams(const LayerCtx& ctx, const LateConfig& cfg)
    : guidance(ctx.sub("guide"), cfg.spe_dim, cfg.corr_dim, cfg.corr_dim),
      wmsa(ctx.sub("wmsa"), cfg.corr_dim, cfg.spatial_heads, cfg.mlp_ratio * cfg.corr_dim),
      swmsa(ctx.sub("swmsa"), cfg.corr_dim, cfg.spatial_heads, cfg.mlp_ratio * cfg.corr_dim),
      window(cfg.window) {}

ClassRefineParams::ClassRefineParams(const LayerCtx& ctx, const LateConfig& cfg)
    : guidance(ctx.sub("guide"), cfg.text_dim, cfg.corr_dim, cfg.corr_dim),
      ln1(ctx.sub("ln1"), cfg.corr_dim),
      ln2(ctx.sub("ln2"), cfg.corr_dim),
      query(ctx.sub("query"), cfg.corr_dim, cfg.corr_dim),
      key(ctx.sub("key"), cfg.corr_dim, cfg.corr_dim),
      value(ctx.sub("value"), cfg.corr_dim, cfg.corr_dim),
      out(ctx.sub("out"), cfg.corr_dim, cfg.corr_dim),
      mlp(ctx.sub("mlp"), cfg.corr_dim, cfg.mlp_ratio * cfg.corr_dim, cfg.corr_dim),
      heads(cfg.class_heads) {}

LateRefinementParams::LateRefinementParams(const LayerCtx& ctx, const LateConfig& c) : cfg(c) {
    cfg.validate();
    for (int64_t s = 0; s < cfg.stages; ++s) {
        spatial.emplace_back(ctx.sub("stage" + std::to_string(s) + ".spatial"), cfg);
        classes.emplace_back(ctx.sub("stage" + std::to_string(s) + ".class"), cfg);
    }
}

WindowLayout make_window_layout(int64_t H, int64_t W, int64_t window, bool shifted) {
    WindowLayout lay;
    lay.height = H;
    lay.width = W;
    const bool collapse = H <= window || W <= window;
    // A side no larger than the window spans the whole grid.
    lay.win_h = std::min(H, window);
    lay.win_w = std::min(W, window);
    if (H % lay.win_h != 0 || W % lay.win_w != 0)
        throw ShapeError("grid " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by window " +
                         std::to_string(window));
    lay.shift = (shifted && !collapse) ? window / 2 : 0;
    const int64_t nwy = H / lay.win_h, nwx = W / lay.win_w, T = lay.win_h * lay.win_w;
    lay.windows = nwy * nwx;
    lay.forward.reserve(static_cast<size_t>(H * W));
    lay.inverse.assign(static_cast<size_t>(H * W), -1);
    for (int64_t a = 0; a < nwy; ++a)
        for (int64_t b = 0; b < nwx; ++b)
            for (int64_t u = 0; u < lay.win_h; ++u)
                for (int64_t v = 0; v < lay.win_w; ++v) {
                    // Rolled grid position (y, x) holds original token (y + s, x + s).
                    const int64_t y = a * lay.win_h + u, x = b * lay.win_w + v;
                    const int64_t tok = ((y + lay.shift) % H) * W + (x + lay.shift) % W;
                    lay.inverse[static_cast<size_t>(tok)] = static_cast<int64_t>(lay.forward.size());
                    lay.forward.push_back(tok);
                }
    if (lay.shift > 0) {
        // Tokens wrapped around by the roll must not attend to their new neighbours.
        auto region = [&](int64_t p, int64_t n, int64_t win) {
            if (p < n - win) return 0;
            if (p < n - lay.shift) return 1;
            return 2;
        };
        lay.mask = Tensor::zeros({lay.windows, T, T});
        auto m = lay.mask.mutable_data();
        for (int64_t a = 0; a < nwy; ++a)
            for (int64_t b = 0; b < nwx; ++b) {
                const int64_t w = a * nwx + b;
                std::vector<int> label(static_cast<size_t>(T));
                for (int64_t u = 0; u < lay.win_h; ++u)
                    for (int64_t v = 0; v < lay.win_w; ++v)
                        label[static_cast<size_t>(u * lay.win_w + v)] =
                            region(a * lay.win_h + u, H, lay.win_h) * 3 + region(b * lay.win_w + v, W, lay.win_w);
                for (int64_t i = 0; i < T; ++i)
                    for (int64_t j = 0; j < T; ++j)
                        if (label[static_cast<size_t>(i)] != label[static_cast<size_t>(j)]) m[(w * T + i) * T + j] = -1e9;
            }
    }
    return lay;
}

namespace {

// [N, rows_in, C] -> [N, rows_out, C] picking rows by `rows`.
std::shared_ptr<std::vector<int64_t>> batched_row_index(const std::vector<int64_t>& rows, int64_t N, int64_t rows_in,
                                                         int64_t C) {
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(N) * rows.size() * static_cast<size_t>(C));
    for (int64_t n = 0; n < N; ++n)
        for (auto r : rows)
            for (int64_t c = 0; c < C; ++c) idx->push_back((n * rows_in + r) * C + c);
    return idx;
}

Tensor to_tokens(const CorrelationVolume& corr) {
    const auto N = corr.classes(), C = corr.channels(), HW = corr.height() * corr.width();
    return permute(reshape(corr.data, {N, C, HW}), {0, 2, 1});  // [N, HW, C]
}

CorrelationVolume from_tokens(const Tensor& tokens, int64_t H, int64_t W) {
    const auto N = tokens.dim(0), C = tokens.dim(2);
    return CorrelationVolume{reshape(permute(tokens, {0, 2, 1}), {N, C, H, W})};
}

}  // namespace

Tensor window_attention_block(const Tensor& tokens, const TransformerBlock& block, const WindowLayout& lay) {
    const int64_t N = tokens.dim(0), HW = tokens.dim(1), C = tokens.dim(2);
    if (HW != lay.height * lay.width) throw ShapeError("window layout does not match token count");
    const int64_t T = lay.win_h * lay.win_w;
    auto y = block.ln1(tokens);
    y = gather(y, batched_row_index(lay.forward, N, HW, C), {N * lay.windows, T, C});
    y = block.attention(y, lay.mask);
    y = gather(y, batched_row_index(lay.inverse, N, HW, C), {N, HW, C});
    auto x = add(tokens, y);
    return add(x, block.mlp(block.ln2(x)));
}

CorrelationVolume spatial_refine(const CorrelationVolume& corr, const FeatureMap& guidance_fL,
                                 const SpatialRefineParams& p) {
    const int64_t H = corr.height(), W = corr.width();
    if (guidance_fL.height() != H || guidance_fL.width() != W)
        throw ShapeError("spatial_refine: guidance grid " + std::to_string(guidance_fL.height()) + "x" +
                         std::to_string(guidance_fL.width()) + " vs correlation grid " + std::to_string(H) + "x" +
                         std::to_string(W));
    const auto g_tok = permute(reshape(guidance_fL.data, {guidance_fL.channels(), H * W}), {1, 0});
    const auto guide = p.guidance(g_tok);  // [HW, C], shared by every class
    auto x = add(to_tokens(corr), guide);
    x = window_attention_block(x, p.wmsa, make_window_layout(H, W, p.window, false));
    x = window_attention_block(x, p.swmsa, make_window_layout(H, W, p.window, true));
    return from_tokens(x, H, W);
}

CorrelationVolume class_refine(const CorrelationVolume& corr, const TextEmbeddingSet& texts,
                               const ClassRefineParams& p) {
    const int64_t N = corr.classes(), C = corr.channels(), H = corr.height(), W = corr.width();
    if (texts.size() != N)
        throw ShapeError("class_refine: " + std::to_string(texts.size()) + " text rows for " + std::to_string(N) +
                         " correlation classes");
    // [N, C, HW] -> [HW, N, C]: one token sequence over classes per location.
    auto x = permute(reshape(corr.data, {N, C, H * W}), {2, 0, 1});
    // Unit-normalized so the head depends on text directions only, like the cosine volumes.
    const auto guide = p.guidance(l2_normalize(texts.mean));  // [N, C]
    const auto y = p.ln1(x);
    const auto qk_in = add(y, guide);
    const auto attn = multihead_attention(p.query(qk_in), p.key(qk_in), p.value(y), p.heads, Tensor());
    x = add(x, p.out(attn));
    x = add(x, p.mlp(p.ln2(x)));
    return CorrelationVolume{reshape(permute(x, {1, 2, 0}), {N, C, H, W})};
}

CorrelationVolume late_refine_stack(const CorrelationVolume& corr, const GuidancePyramid& guidance,
                                    const TextEmbeddingSet& texts, const LateRefinementParams& params) {
    auto x = corr;
    for (size_t s = 0; s < params.spatial.size(); ++s) {
        x = spatial_refine(x, guidance.fL, params.spatial[s]);
        x = class_refine(x, texts, params.classes[s]);
    }
    return x;
}

}  // namespace ovseg
