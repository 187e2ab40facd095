#include "ovseg/correlation.hpp"

#include "ovseg/errors.hpp"

namespace ovseg {

CorrelationParams::CorrelationParams(const LayerCtx& ctx, int64_t dim, bool ensemble)
    : corr_dim(dim), text_ensemble(ensemble), projection(ctx.sub("projection"), 2, dim) {
    if (dim < 1) throw ConfigError("corr_dim must be positive");
}

std::pair<SimilarityVolume, SimilarityVolume> cosine_volumes(const FeatureMap& phi_ref, const TextEmbeddingSet& texts) {
    const int64_t C = phi_ref.channels(), H = phi_ref.height(), W = phi_ref.width();
    if (texts.width() != C)
        throw ShapeError("cosine_volumes: feature channels " + std::to_string(C) + " vs text width " +
                         std::to_string(texts.width()));
    const auto tokens = l2_normalize(permute(reshape(phi_ref.data, {C, H * W}), {1, 0}));  // [HW, C]
    const int64_t N = texts.size();
    auto sim = [&](const Tensor& t) { return reshape(matmul(l2_normalize(t), tokens, true), {N, H, W}); };
    return {SimilarityVolume{sim(texts.global), SimilarityKind::Global},
            SimilarityVolume{sim(texts.local), SimilarityKind::Local}};
}

CorrelationVolume project_correlation(const SimilarityVolume& sg, const SimilarityVolume& sl,
                                      const CorrelationParams& params) {
    if (sg.data.shape() != sl.data.shape())
        throw ShapeError("project_correlation: " + shape_str(sg.data.shape()) + " vs " + shape_str(sl.data.shape()));
    if (sg.data.rank() != 3) throw ShapeError("similarity volumes must be [N, H, W]");
    const int64_t N = sg.data.dim(0), H = sg.data.dim(1), W = sg.data.dim(2);
    const auto& first = params.text_ensemble ? sg.data : sl.data;
    const auto stacked = concat({reshape(first, {N, H * W, 1}), reshape(sl.data, {N, H * W, 1})}, 2);
    const auto proj = params.projection(stacked);  // [N, HW, Ccorr]
    return CorrelationVolume{reshape(permute(proj, {0, 2, 1}), {N, params.corr_dim, H, W})};
}

}  // namespace ovseg
