#pragma once

// Local-global aggregation: overlapping-tile encoding merged by per-cell
// averaging, then averaged with the full-image encoding.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ovseg/model.hpp"

namespace ovseg {

struct LgaConfig {
    int64_t resize = 640;
    int64_t window = 384;
    int64_t overlap = 128;
    bool lga_vlm = true;
    bool lga_spe = false;

    void validate() const;
};

struct TileOrigin {
    int64_t row = 0;
    int64_t col = 0;

    bool operator==(const TileOrigin&) const = default;
};

struct TilePlan {
    int64_t height = 0, width = 0;
    int64_t window = 0;
    int64_t overlap = 0;
    int64_t stride = 0;
    std::vector<TileOrigin> origins;  // row-major
};

// Origins 0, s, 2s, ... per axis; the last one is clamped to size - window.
std::vector<int64_t> axis_origins(int64_t size, int64_t window, int64_t stride);

// Plan for the config's square resize target.
TilePlan plan_tiles(const LgaConfig& cfg);
TilePlan plan_tiles(int64_t height, int64_t width, int64_t window, int64_t overlap);

// Per-cell mean over every tile covering the cell. Features are at 1/patch of
// the tile extent; origins must sit on the patch grid.
FeatureMap merge_tiles(const std::vector<std::pair<TileOrigin, FeatureMap>>& tiles, const TilePlan& plan,
                       int patch);

// Crop [3, h, w] at (row, col).
ImageTensor crop_image(const ImageTensor& image, int64_t row, int64_t col, int64_t h, int64_t w);
ImageTensor resize_image(const ImageTensor& image, int64_t height, int64_t width);

// Aggregated VLM features for an image already at the target size.
FeatureMap lga_features(const ImageTensor& image, const VisionEncoder& encoder, const LgaConfig& cfg);

// Guidance pyramid, tiled and merged per tap when lga_spe is on.
GuidancePyramid lga_guidance(const ImageTensor& image, const SemanticPriorEncoder& encoder, const LgaConfig& cfg);

struct InferenceResult {
    SegMap segmap;
    LogitMap logits;
};

// resize -> LGA features -> head -> argmax. Runs without gradient recording.
InferenceResult infer_logits(const ImageTensor& image, const SegmentationModel& model,
                             const std::vector<std::string>& class_names, const LgaConfig& cfg);
SegMap infer(const ImageTensor& image, const SegmentationModel& model, const std::vector<std::string>& class_names,
             const LgaConfig& cfg);

}  // namespace ovseg
