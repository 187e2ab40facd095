#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovseg/tensor.hpp"

namespace ovseg {

// RGB image, data [3, H, W] with values in [0, 1].
struct ImageTensor {
    Tensor data;

    int64_t height() const { return data.dim(1); }
    int64_t width() const { return data.dim(2); }
};

// Dense features, data [C, H, W].
struct FeatureMap {
    Tensor data;

    int64_t channels() const { return data.dim(0); }
    int64_t height() const { return data.dim(1); }
    int64_t width() const { return data.dim(2); }
};

struct ClsToken {
    Tensor data;  // [C]
};

// Per-class text embeddings, each [N, C]. `mean` is (global + local) / 2.
struct TextEmbeddingSet {
    std::vector<std::string> class_names;
    Tensor global;
    Tensor local;
    Tensor mean;

    int64_t size() const { return global.dim(0); }
    int64_t width() const { return global.dim(1); }
};

// Semantic prior taps at a shared spatial resolution.
struct GuidancePyramid {
    FeatureMap f7;
    FeatureMap f15;
    FeatureMap fL;
};

enum class SimilarityKind { Global, Local };

struct SimilarityVolume {
    Tensor data;  // [N, H, W]
    SimilarityKind kind = SimilarityKind::Global;
};

struct CorrelationVolume {
    Tensor data;  // [N, C_corr, H, W]

    int64_t classes() const { return data.dim(0); }
    int64_t channels() const { return data.dim(1); }
    int64_t height() const { return data.dim(2); }
    int64_t width() const { return data.dim(3); }
};

// Pre-sigmoid per-class logits at image resolution, data [N, H, W].
struct LogitMap {
    Tensor data;
};

// Per-pixel class indices (row-major) with optional per-class probabilities.
struct SegMap {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<int32_t> labels;
    Tensor probs;  // [N, H, W] sigmoid probabilities; may be undefined

    int32_t at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
};

ImageTensor make_image(Tensor data);
FeatureMap make_feature_map(Tensor data);

}  // namespace ovseg
