#pragma once

// Late refinement of the correlation volume: per-class window / shifted-window
// self-attention guided by the projected final SPE tap, then per-location
// attention across classes guided by the projected mean text embedding.
// The class axis carries no positional encoding, so every stage is
// equivariant under class permutations.

#include <memory>
#include <vector>

#include "ovseg/nn.hpp"
#include "ovseg/types.hpp"

namespace ovseg {

struct LateConfig {
    int64_t corr_dim = 32;
    int64_t spe_dim = 64;
    int64_t text_dim = 64;
    int64_t window = 4;
    int64_t spatial_heads = 4;
    int64_t class_heads = 4;
    int64_t stages = 2;
    int64_t mlp_ratio = 2;

    void validate() const;
};

struct SpatialRefineParams {
    Mlp guidance;  // M_v: spe_dim -> corr_dim
    TransformerBlock wmsa;
    TransformerBlock swmsa;
    int64_t window = 4;

    SpatialRefineParams() = default;
    SpatialRefineParams(const LayerCtx& ctx, const LateConfig& cfg);
};

struct ClassRefineParams {
    Mlp guidance;  // M_t: text_dim -> corr_dim
    LayerNorm ln1, ln2;
    Linear query, key, value, out;
    Mlp mlp;
    int64_t heads = 4;

    ClassRefineParams() = default;
    ClassRefineParams(const LayerCtx& ctx, const LateConfig& cfg);
};

struct LateRefinementParams {
    LateConfig cfg;
    std::vector<SpatialRefineParams> spatial;
    std::vector<ClassRefineParams> classes;

    LateRefinementParams() = default;
    LateRefinementParams(const LayerCtx& ctx, const LateConfig& cfg);
};

// Token permutation and mask for one (optionally shifted) window partition of
// an H x W grid.
struct WindowLayout {
    int64_t height = 0, width = 0;
    int64_t win_h = 0, win_w = 0;
    int64_t shift = 0;
    int64_t windows = 0;
    std::vector<int64_t> forward;  // slot -> token, slots ordered window-major
    std::vector<int64_t> inverse;  // token -> slot
    Tensor mask;                   // [windows, T, T] additive, undefined when unshifted
};

// Windows of `window` x `window` (shift window/2 when shifted). A grid side no
// larger than the window collapses to a single unshifted window.
WindowLayout make_window_layout(int64_t height, int64_t width, int64_t window, bool shifted);

// One Swin block applied independently per class: x + Attn(LN(x)) within
// windows, then x + MLP(LN(x)). tokens: [N, H*W, C].
Tensor window_attention_block(const Tensor& tokens, const TransformerBlock& block, const WindowLayout& layout);

CorrelationVolume spatial_refine(const CorrelationVolume& corr, const FeatureMap& guidance_fL,
                                 const SpatialRefineParams& params);

CorrelationVolume class_refine(const CorrelationVolume& corr, const TextEmbeddingSet& texts,
                               const ClassRefineParams& params);

CorrelationVolume late_refine_stack(const CorrelationVolume& corr, const GuidancePyramid& guidance,
                                    const TextEmbeddingSet& texts, const LateRefinementParams& params);

}  // namespace ovseg
