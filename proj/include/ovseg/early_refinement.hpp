#pragma once

// Windowed cross-attention cleanup of dense VLM features. Queries come from a
// small convolutional image encoder, keys from that encoder and the VLM
// features, values are the VLM features themselves; every output vector is a
// softmax-weighted average of input vectors from its window.

#include <vector>

#include "ovseg/nn.hpp"
#include "ovseg/types.hpp"

namespace ovseg {

struct RefinerConfig {
    int patch_size = 16;
    int64_t feature_dim = 64;  // C of the VLM features
    int64_t conv_dim = 32;     // C_r of the image encoder
    int64_t qk_dim = 32;
    int64_t window = 3;
    int64_t heads = 4;
    double rope_base = 10000.0;

    void validate() const;
};

struct RefinerParams {
    RefinerConfig cfg;
    Conv2d conv1, conv2;
    LayerNorm norm_psi, norm_phi;
    Linear query;
    Linear key_psi, key_phi;

    RefinerParams() = default;
    RefinerParams(const LayerCtx& ctx, const RefinerConfig& cfg);
};

// Attention bookkeeping for one early_refine call.
struct EarlyRefineTrace {
    int64_t window_slots = 0;           // T = window^2
    std::vector<int64_t> slot_tokens;   // [n_windows * T]; token index (y*W+x) or -1 for padding
    Tensor weights;                     // [n_windows, T, T], head-averaged softmax weights
};

// Applies the 2-D rotary encoding to a [C, H, W] map; `row0`/`col0` offset the
// integer grid positions.
FeatureMap rope_apply(const FeatureMap& x, int64_t row0 = 0, int64_t col0 = 0, double base = 10000.0);

// Non-overlapping window x window partition of an h x w grid; windows at the
// right/bottom border are clipped to the grid. Returns token index per slot
// (-1 where a clipped window has no token).
std::vector<int64_t> window_partition_index(int64_t h, int64_t w, int64_t window);

// psi_v: the image encoder output [C_r, H/P, W/P].
FeatureMap image_features(const ImageTensor& image, const RefinerParams& params);

FeatureMap early_refine(const ImageTensor& image, const FeatureMap& phi_v, const RefinerParams& params,
                        EarlyRefineTrace* trace = nullptr);

}  // namespace ovseg
