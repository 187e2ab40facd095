#include "ovseg/early_refinement.hpp"

#include <cmath>

#include "ovseg/errors.hpp"

namespace ovseg {

void RefinerConfig::validate() const {
    if (window < 1) throw ConfigError("early refinement window must be >= 1");
    if (heads < 1 || qk_dim % heads != 0) throw ConfigError("early refinement heads must divide qk_dim");
    if ((qk_dim / heads) % 2 != 0) throw ConfigError("early refinement per-head width must be even for RoPE");
    if (patch_size % 4 != 0) throw ConfigError("patch_size must be a multiple of 4");
    if (conv_dim < 1 || feature_dim < 1) throw ConfigError("early refinement widths must be positive");
}

RefinerParams::RefinerParams(const LayerCtx& ctx, const RefinerConfig& c)
    : cfg(c),
      conv1(ctx.sub("conv1"), 3, c.conv_dim, 4, 4, 0),
      conv2(ctx.sub("conv2"), c.conv_dim, c.conv_dim, c.patch_size / 4, c.patch_size / 4, 0),
      norm_psi(ctx.sub("norm_psi"), c.conv_dim),
      norm_phi(ctx.sub("norm_phi"), c.feature_dim),
      query(ctx.sub("query"), c.conv_dim, c.qk_dim),
      key_psi(ctx.sub("key_psi"), c.conv_dim, c.qk_dim),
      key_phi(ctx.sub("key_phi"), c.feature_dim, c.qk_dim, false) {
    cfg.validate();
}

FeatureMap rope_apply(const FeatureMap& x, int64_t row0, int64_t col0, double base) {
    const int64_t C = x.channels(), H = x.height(), W = x.width();
    if (C % 2 != 0) throw ConfigError("rope_apply: channel count " + std::to_string(C) + " is odd");
    std::vector<int64_t> rows, cols;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t z = 0; z < W; ++z) {
            rows.push_back(y + row0);
            cols.push_back(z + col0);
        }
    const auto tokens = permute(reshape(x.data, {C, H * W}), {1, 0});
    const auto rotated = rope2d(tokens, rows, cols, base);
    return FeatureMap{reshape(permute(rotated, {1, 0}), {C, H, W})};
}

std::vector<int64_t> window_partition_index(int64_t h, int64_t w, int64_t window) {
    const int64_t nwy = (h + window - 1) / window, nwx = (w + window - 1) / window;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(nwy * nwx * window * window));
    for (int64_t a = 0; a < nwy; ++a)
        for (int64_t b = 0; b < nwx; ++b)
            for (int64_t u = 0; u < window; ++u)
                for (int64_t v = 0; v < window; ++v) {
                    const int64_t y = a * window + u, x = b * window + v;
                    idx.push_back(y < h && x < w ? y * w + x : -1);
                }
    return idx;
}

FeatureMap image_features(const ImageTensor& image, const RefinerParams& p) {
    const auto x = reshape(image.data, {1, 3, image.height(), image.width()});
    const auto psi = p.conv2(gelu(p.conv1(x)));
    return FeatureMap{reshape(psi, {psi.dim(1), psi.dim(2), psi.dim(3)})};
}

namespace {

// Expands a token-level index over [tokens, C] rows to element level.
std::shared_ptr<std::vector<int64_t>> expand_rows(const std::vector<int64_t>& rows, int64_t C) {
    auto out = std::make_shared<std::vector<int64_t>>();
    out->reserve(rows.size() * static_cast<size_t>(C));
    for (auto r : rows)
        for (int64_t c = 0; c < C; ++c) out->push_back(r < 0 ? -1 : r * C + c);
    return out;
}

}  // namespace

FeatureMap early_refine(const ImageTensor& image, const FeatureMap& phi_v, const RefinerParams& p,
                        EarlyRefineTrace* trace) {
    const auto& cfg = p.cfg;
    if (phi_v.channels() != cfg.feature_dim)
        throw ShapeError("early_refine: feature channels " + std::to_string(phi_v.channels()) + " != " +
                         std::to_string(cfg.feature_dim));
    const auto psi = image_features(image, p);
    const int64_t H = phi_v.height(), W = phi_v.width(), C = phi_v.channels();
    if (psi.height() != H || psi.width() != W)
        throw ShapeError("early_refine: image grid " + std::to_string(psi.height()) + "x" + std::to_string(psi.width()) +
                         " does not match feature grid " + std::to_string(H) + "x" + std::to_string(W));

    const int64_t T = H * W;
    const auto psi_tok = permute(reshape(psi.data, {cfg.conv_dim, T}), {1, 0});
    const auto phi_tok = permute(reshape(phi_v.data, {C, T}), {1, 0});
    const auto psi_n = p.norm_psi(psi_tok);
    auto q = p.query(psi_n);
    auto k = add(p.key_psi(psi_n), p.key_phi(p.norm_phi(phi_tok)));

    std::vector<int64_t> rows, cols;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            rows.push_back(y);
            cols.push_back(x);
        }
    const int64_t D = cfg.qk_dim, heads = cfg.heads, dh = D / heads;
    // Rotations act within each head's channel slice.
    auto rope_heads = [&](const Tensor& t) {
        const auto per_head = permute(reshape(t, {T, heads, dh}), {1, 0, 2});
        return reshape(permute(rope2d(per_head, rows, cols, cfg.rope_base), {1, 0, 2}), {T, D});
    };
    q = rope_heads(q);
    k = rope_heads(k);

    const int64_t ws = cfg.window, S = ws * ws;
    const auto slots = window_partition_index(H, W, ws);
    const int64_t nw = static_cast<int64_t>(slots.size()) / S;

    auto win = [&](const Tensor& tok, int64_t width) {
        return gather(tok, expand_rows(slots, width), {nw, S, width});
    };
    const auto qw = permute(reshape(win(q, D), {nw, S, heads, dh}), {0, 2, 1, 3});
    const auto kw = permute(reshape(win(k, D), {nw, S, heads, dh}), {0, 2, 1, 3});
    const auto vw = win(phi_tok, C);

    // Padding slots never act as keys.
    auto mask = Tensor::zeros({nw, 1, 1, S});
    for (int64_t i = 0; i < nw * S; ++i)
        if (slots[static_cast<size_t>(i)] < 0) mask.mutable_data()[static_cast<size_t>(i)] = -1e9;

    auto scores = scale(matmul(qw, kw, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = add(scores, mask);
    const auto weights = mean_axis(softmax(scores), 1);  // [nw, S, S]
    const auto out_w = matmul(weights, vw);               // [nw, S, C]

    // Scatter back: token t sits at exactly one valid slot.
    std::vector<int64_t> token_slot(static_cast<size_t>(T), -1);
    for (int64_t i = 0; i < nw * S; ++i)
        if (slots[static_cast<size_t>(i)] >= 0) token_slot[static_cast<size_t>(slots[static_cast<size_t>(i)])] = i;
    const auto out_tok = gather(reshape(out_w, {nw * S, C}), expand_rows(token_slot, C), {T, C});

    if (trace) {
        trace->window_slots = S;
        trace->slot_tokens = slots;
        trace->weights = weights;
    }
    return FeatureMap{reshape(permute(out_tok, {1, 0}), {C, H, W})};
}

}  // namespace ovseg
