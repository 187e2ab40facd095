#pragma once

#include <cstdint>

#include "ovseg/correlation.hpp"
#include "ovseg/decoder.hpp"
#include "ovseg/early_refinement.hpp"
#include "ovseg/encoders.hpp"
#include "ovseg/late_refinement.hpp"

namespace ovseg {

struct ModelConfig {
    EncoderConfig encoder;
    int64_t refiner_conv_dim = 32;
    int64_t refiner_qk_dim = 32;
    int64_t refiner_window = 3;
    int64_t refiner_heads = 4;
    int64_t corr_dim = 32;
    int64_t late_stages = 2;
    int64_t spatial_window = 4;
    int64_t spatial_heads = 4;
    int64_t class_heads = 4;
    int64_t mlp_ratio = 2;
    int64_t decoder_width1 = 32;
    int64_t decoder_width2 = 16;
    // Ablation toggles
    bool text_ensemble = true;
    bool early_refine = true;
    uint64_t seed = 0;

    void validate() const;
    RefinerConfig refiner() const;
    LateConfig late() const;
    DecoderConfig decoder() const;
};

// Records which computation path a forward pass took.
struct ForwardTrace {
    bool early_refine_applied = false;
    bool global_text_used = false;
    int64_t late_stages_run = 0;
    EarlyRefineTrace early;
    FeatureMap refined;
    CorrelationVolume correlation;
};

// Encoders plus segmentation head. Backbone-tier parameters: vision, text and
// SPE encoders and the early refiner; everything else is head tier.
class SegmentationModel {
public:
    explicit SegmentationModel(const ModelConfig& cfg);
    SegmentationModel(const SegmentationModel&) = delete;
    SegmentationModel& operator=(const SegmentationModel&) = delete;
    SegmentationModel(SegmentationModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    TextEmbeddingSet encode_text(const std::vector<std::string>& class_names) const;

    // Single-pass path used in training: the image is encoded once, no tiling.
    LogitMap forward(const ImageTensor& image, const TextEmbeddingSet& texts, ForwardTrace* trace = nullptr) const;

    // Early refinement -> correlation -> late refinement -> decoder, from
    // precomputed VLM features and guidance.
    LogitMap head(const ImageTensor& image, const FeatureMap& phi_v, const GuidancePyramid& guidance,
                  const TextEmbeddingSet& texts, ForwardTrace* trace = nullptr) const;

    VisionEncoder vision;
    TextEncoder text;
    SemanticPriorEncoder spe;
    RefinerParams refiner;
    CorrelationParams correlation;
    LateRefinementParams late;
    DecoderParams decoder;

private:
    ModelConfig cfg_;
    ParamStore store_;
};

}  // namespace ovseg
