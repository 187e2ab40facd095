#pragma once

#include <utility>

#include "ovseg/nn.hpp"
#include "ovseg/types.hpp"

namespace ovseg {

struct CorrelationParams {
    int64_t corr_dim = 32;
    // When false the projection sees [S^l; S^l] instead of [S^g; S^l].
    bool text_ensemble = true;
    Linear projection;  // 1x1 conv: 2 -> corr_dim, shared across classes

    CorrelationParams() = default;
    CorrelationParams(const LayerCtx& ctx, int64_t corr_dim, bool text_ensemble);
};

// Cosine similarity of every feature location against every class's global and
// local text embedding. Zero vectors give similarity 0.
std::pair<SimilarityVolume, SimilarityVolume> cosine_volumes(const FeatureMap& phi_ref, const TextEmbeddingSet& texts);

CorrelationVolume project_correlation(const SimilarityVolume& sg, const SimilarityVolume& sl,
                                      const CorrelationParams& params);

}  // namespace ovseg
