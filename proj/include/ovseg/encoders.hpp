#pragma once

// Seedable stand-ins for the frozen-or-finetunable backbones: the VLM vision
// encoder, the VLM text encoder and the semantic prior encoder (SPE).

#include <string>
#include <utility>
#include <vector>

#include "ovseg/nn.hpp"
#include "ovseg/types.hpp"

namespace ovseg {

enum class VisionArch {
    Vit,     // patch embed + sinusoidal positions + one transformer block
    Linear,  // patch embed only; translation invariant on the patch grid
};

struct EncoderConfig {
    int patch_size = 16;
    int64_t vision_dim = 64;
    VisionArch vision_arch = VisionArch::Vit;
    int64_t vision_heads = 4;
    int64_t spe_dim = 64;
    int64_t spe_heads = 4;
    int64_t text_hash_dim = 256;
    int64_t text_hidden = 128;
    int text_ngram = 3;
    std::string prompt_template = "A photo of a {} in the scene";

    void validate() const;
};

// Splits [3, H, W] into [h*w, 3*P*P] patch rows; throws ShapeError naming the
// axis that is not a multiple of P.
Tensor extract_patches(const ImageTensor& image, int patch);
void check_patch_divisible(const ImageTensor& image, int patch);

// Fixed 2-D sine/cosine position table [h*w, dim].
Tensor sincos_positions(int64_t h, int64_t w, int64_t dim);

class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(const LayerCtx& ctx, const EncoderConfig& cfg);

    std::pair<ClsToken, FeatureMap> operator()(const ImageTensor& image) const;
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Linear patch_embed_;
    Tensor cls_;
    TransformerBlock block_;
    LayerNorm norm_;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const LayerCtx& ctx, const EncoderConfig& cfg);

    TextEmbeddingSet operator()(const std::vector<std::string>& class_names) const;

    std::string prompt(const std::string& class_name) const;
    // Signed character n-gram feature hashing of one prompt, unit-normalized.
    std::vector<double> hash_features(const std::string& prompt) const;

private:
    EncoderConfig cfg_;
    Linear hidden_;
    Linear global_head_;
    Linear local_head_;
};

class SemanticPriorEncoder {
public:
    SemanticPriorEncoder() = default;
    SemanticPriorEncoder(const LayerCtx& ctx, const EncoderConfig& cfg);

    GuidancePyramid operator()(const ImageTensor& image) const;

private:
    EncoderConfig cfg_;
    Linear patch_embed_;
    std::vector<TransformerBlock> blocks_;
};

std::pair<ClsToken, FeatureMap> vision_encode(const ImageTensor& image, const VisionEncoder& encoder);
TextEmbeddingSet text_encode(const std::vector<std::string>& class_names, const TextEncoder& encoder);
GuidancePyramid spe_encode(const ImageTensor& image, const SemanticPriorEncoder& encoder);

}  // namespace ovseg
