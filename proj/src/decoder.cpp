#include "ovseg/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "ovseg/errors.hpp"

namespace ovseg {

void DecoderConfig::validate() const {
    if (patch_size < 4 || patch_size % 4 != 0) throw ConfigError("decoder: patch_size must be a multiple of 4");
    if (corr_dim < 1 || spe_dim < 1 || width1 < 1 || width2 < 1) throw ConfigError("decoder widths must be positive");
}

DecoderParams::DecoderParams(const LayerCtx& ctx, const DecoderConfig& c)
    : cfg(c),
      up1(ctx.sub("up1"), c.corr_dim, c.width1 * 4),
      fuse1_x(ctx.sub("fuse1_x"), c.width1, c.width1, 3, 1, 1),
      fuse1_g(ctx.sub("fuse1_g"), c.spe_dim, c.width1, 3, 1, 1, false),
      up2(ctx.sub("up2"), c.width1, c.width2 * 4),
      fuse2_x(ctx.sub("fuse2_x"), c.width2, c.width2, 3, 1, 1),
      fuse2_g(ctx.sub("fuse2_g"), c.spe_dim, c.width2, 3, 1, 1, false),
      head(ctx.sub("head"), c.width2, 1, 1, 1, 0) {
    cfg.validate();
}

Tensor transposed_conv2x2(const Tensor& x, const Linear& layer) {
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int64_t cout = layer.weight.dim(0) / 4;
    auto y = layer(permute(x, {0, 2, 3, 1}));         // [N, H, W, Cout*4]
    y = reshape(y, {N, H, W, cout, 2, 2});
    y = permute(y, {0, 3, 1, 4, 2, 5});               // [N, Cout, H, 2, W, 2]
    return reshape(y, {N, cout, 2 * H, 2 * W});
}

namespace {

// up(F_g, factor) followed by the guidance half of a fusion conv: [1, Cout, h, w].
Tensor guidance_term(const FeatureMap& g, int64_t h, int64_t w, const Conv2d& conv) {
    const auto up = resize_bilinear(g.data, h, w);
    return conv(reshape(up, {1, g.channels(), h, w}));
}

}  // namespace

LogitMap decode(const CorrelationVolume& corr, const GuidancePyramid& guidance, const DecoderParams& p) {
    const int64_t N = corr.classes(), H = corr.height(), W = corr.width();
    if (corr.channels() != p.cfg.corr_dim)
        throw ShapeError("decode: correlation channels " + std::to_string(corr.channels()) + " != " +
                         std::to_string(p.cfg.corr_dim));
    for (const auto* g : {&guidance.f7, &guidance.f15})
        if (g->height() != H || g->width() != W)
            throw ShapeError("decode: guidance grid " + std::to_string(g->height()) + "x" + std::to_string(g->width()) +
                             " is not at the correlation scale " + std::to_string(H) + "x" + std::to_string(W));

    auto x = transposed_conv2x2(corr.data, p.up1);  // [N, w1, 2H, 2W]
    x = gelu(add(p.fuse1_x(x), guidance_term(guidance.f7, 2 * H, 2 * W, p.fuse1_g)));
    x = transposed_conv2x2(x, p.up2);  // [N, w2, 4H, 4W]
    x = gelu(add(p.fuse2_x(x), guidance_term(guidance.f15, 4 * H, 4 * W, p.fuse2_g)));
    x = reshape(p.head(x), {N, 4 * H, 4 * W});
    const int64_t factor = p.cfg.patch_size / 4;
    return LogitMap{resize_bilinear(x, 4 * H * factor, 4 * W * factor)};
}

SegMap predict(const LogitMap& logits) {
    const auto& t = logits.data;
    if (t.rank() != 3) throw ShapeError("predict expects [N, H, W] logits");
    const int64_t N = t.dim(0), H = t.dim(1), W = t.dim(2);
    SegMap out;
    out.height = H;
    out.width = W;
    out.labels.assign(static_cast<size_t>(H * W), 0);
    const auto v = t.data();
    std::vector<double> probs(v.size());
    // Kept strictly inside (0, 1) even where the double sigmoid rounds to 0 or 1.
    const double lo = std::nextafter(0.0, 1.0), hi = std::nextafter(1.0, 0.0);
    for (size_t i = 0; i < v.size(); ++i) probs[i] = std::clamp(1.0 / (1.0 + std::exp(-v[i])), lo, hi);
    for (int64_t p = 0; p < H * W; ++p) {
        int32_t best = 0;
        for (int64_t c = 1; c < N; ++c)
            if (v[c * H * W + p] > v[best * H * W + p]) best = static_cast<int32_t>(c);
        out.labels[static_cast<size_t>(p)] = best;
    }
    out.probs = Tensor::from({N, H, W}, std::move(probs));
    return out;
}

}  // namespace ovseg
