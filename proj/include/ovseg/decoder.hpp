#pragma once

#include "ovseg/nn.hpp"
#include "ovseg/types.hpp"

namespace ovseg {

struct DecoderConfig {
    int patch_size = 16;
    int64_t corr_dim = 32;
    int64_t spe_dim = 64;
    int64_t width1 = 32;  // channels after the first 2x stage
    int64_t width2 = 16;  // channels after the second 2x stage

    void validate() const;
};

// Every conv treats the class axis as batch, so kernels are shared across
// classes. The guidance-fusion convs act on [x; up(F_g)] and are stored with
// their weight split along input channels (x part, guidance part); the
// guidance half is evaluated once and broadcast over classes.
struct DecoderParams {
    DecoderConfig cfg;
    Linear up1;  // 2x2 stride-2 transposed conv as a per-pixel linear map
    Conv2d fuse1_x, fuse1_g;
    Linear up2;
    Conv2d fuse2_x, fuse2_g;
    Conv2d head;

    DecoderParams() = default;
    DecoderParams(const LayerCtx& ctx, const DecoderConfig& cfg);
};

// 2x2 stride-2 transposed convolution of x [N, Cin, H, W] with `weight` laid
// out [Cout*4, Cin] (output channel major, then (dy, dx)).
Tensor transposed_conv2x2(const Tensor& x, const Linear& layer);

// corr at 1/P scale -> logits at full resolution (grid * P).
LogitMap decode(const CorrelationVolume& corr, const GuidancePyramid& guidance, const DecoderParams& params);

// Per-pixel argmax (lowest class index wins ties) plus sigmoid probabilities.
SegMap predict(const LogitMap& logits);

}  // namespace ovseg
