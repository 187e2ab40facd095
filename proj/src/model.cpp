#include "ovseg/model.hpp"

#include "ovseg/errors.hpp"

namespace ovseg {

void ModelConfig::validate() const {
    encoder.validate();
    refiner().validate();
    late().validate();
    decoder().validate();
}

RefinerConfig ModelConfig::refiner() const {
    RefinerConfig r;
    r.patch_size = encoder.patch_size;
    r.feature_dim = encoder.vision_dim;
    r.conv_dim = refiner_conv_dim;
    r.qk_dim = refiner_qk_dim;
    r.window = refiner_window;
    r.heads = refiner_heads;
    return r;
}

LateConfig ModelConfig::late() const {
    LateConfig l;
    l.corr_dim = corr_dim;
    l.spe_dim = encoder.spe_dim;
    l.text_dim = encoder.vision_dim;
    l.window = spatial_window;
    l.spatial_heads = spatial_heads;
    l.class_heads = class_heads;
    l.stages = late_stages;
    l.mlp_ratio = mlp_ratio;
    return l;
}

DecoderConfig ModelConfig::decoder() const {
    DecoderConfig d;
    d.patch_size = encoder.patch_size;
    d.corr_dim = corr_dim;
    d.spe_dim = encoder.spe_dim;
    d.width1 = decoder_width1;
    d.width2 = decoder_width2;
    return d;
}

namespace {

// Validates before any member is built.
const ModelConfig& checked(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

SegmentationModel::SegmentationModel(const ModelConfig& cfg_in) : cfg_(checked(cfg_in)) {
    Rng rng(cfg_.seed);
    const LayerCtx backbone{store_, rng, ParamGroup::Backbone, ""};
    const LayerCtx head_ctx{store_, rng, ParamGroup::Head, ""};
    vision = VisionEncoder(backbone.sub("vision"), cfg_.encoder);
    text = TextEncoder(backbone.sub("text"), cfg_.encoder);
    spe = SemanticPriorEncoder(backbone.sub("spe"), cfg_.encoder);
    refiner = RefinerParams(backbone.sub("refiner"), cfg_.refiner());
    correlation = CorrelationParams(head_ctx.sub("correlation"), cfg_.corr_dim, cfg_.text_ensemble);
    late = LateRefinementParams(head_ctx.sub("late"), cfg_.late());
    decoder = DecoderParams(head_ctx.sub("decoder"), cfg_.decoder());
}

TextEmbeddingSet SegmentationModel::encode_text(const std::vector<std::string>& class_names) const {
    return text(class_names);
}

LogitMap SegmentationModel::forward(const ImageTensor& image, const TextEmbeddingSet& texts, ForwardTrace* trace) const {
    const auto [cls, phi_v] = vision(image);
    (void)cls;  // exposed by the encoder, not consumed by the head
    return head(image, phi_v, spe(image), texts, trace);
}

LogitMap SegmentationModel::head(const ImageTensor& image, const FeatureMap& phi_v, const GuidancePyramid& guidance,
                                 const TextEmbeddingSet& texts, ForwardTrace* trace) const {
    if (texts.size() < 1) throw ArgumentError("head: no classes");
    FeatureMap refined = phi_v;
    if (cfg_.early_refine) refined = early_refine(image, phi_v, refiner, trace ? &trace->early : nullptr);
    const auto [sg, sl] = cosine_volumes(refined, texts);
    auto corr = project_correlation(sg, sl, correlation);
    if (trace) {
        trace->early_refine_applied = cfg_.early_refine;
        trace->global_text_used = correlation.text_ensemble;
        trace->refined = refined;
        trace->correlation = corr;
        trace->late_stages_run = static_cast<int64_t>(late.spatial.size());
    }
    corr = late_refine_stack(corr, guidance, texts, late);
    return decode(corr, guidance, decoder);
}

}  // namespace ovseg
