#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ovseg/errors.hpp"
#include "ovseg/losses.hpp"
#include "ovseg/model.hpp"

namespace ovseg {

struct SyntheticScene {
    ImageTensor image;
    SegMap mask;
    std::vector<std::string> class_names;
};

// Names of the built-in procedural textures, in palette order.
const std::vector<std::string>& texture_vocabulary();

// Patch-aligned region layout (nearest of a few random seed cells) with one
// procedural texture per class. Classes are the first `n_classes` vocabulary
// entries; every class covers at least 1% of the pixels.
SyntheticScene generate_scene(uint64_t seed, int64_t n_classes, int64_t size, int patch = 16);

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<SyntheticScene> scenes;
};

Dataset synthetic_dataset(uint64_t seed, int64_t n_scenes, int64_t n_classes, int64_t size, int patch = 16);

struct TrainToggles {
    bool text_ensemble = true;
    bool early_refine = true;
    bool focal_dice = true;  // off: plain BCE (gamma 0, no dice term)
};

struct TrainConfig {
    double lr_backbone = 1e-4;
    double lr_head = 2e-4;
    double lr_floor = 0.0;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int64_t batch = 4;
    int64_t iters = 2000;
    int64_t crop = 384;
    bool hflip = true;
    int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    int64_t log_every = 0;
    LossConfig loss;
    TrainToggles toggles;

    void validate(int patch) const;
    // Loss actually optimized once toggles are applied.
    LossConfig effective_loss() const;
    // Copies the architecture toggles into a model config.
    void apply_toggles(ModelConfig& model) const;
};

// Cosine decay from base (it = 0) to floor (it = iters).
double cosine_lr(double base, int64_t it, int64_t iters, double floor = 0.0);

// Number of parameters in each tier; throws if the tiers do not partition the
// store exactly.
std::pair<int64_t, int64_t> check_param_groups(const ParamStore& store);

// Decoupled weight decay, applied to weight matrices and kernels only.
class AdamW {
public:
    AdamW(ParamStore& store, const TrainConfig& cfg);
    void step(double lr_backbone, double lr_head);
    int64_t steps() const { return t_; }

private:
    ParamStore* store_;
    double beta1_, beta2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct LossRecord {
    int64_t iter = 0;
    double focal = 0.0;
    double dice = 0.0;
    double combined = 0.0;
    double lr_backbone = 0.0;
    double lr_head = 0.0;
};

struct BatchItem {
    int64_t scene = 0;
    int64_t row = 0, col = 0;
    bool flipped = false;
    ImageTensor image;
    SegMap mask;
};

class NonFiniteLossError : public NumericError {
public:
    NonFiniteLossError(int64_t iteration, std::vector<BatchItem> batch);
    int64_t iteration;
    std::vector<BatchItem> batch;
};

struct TrainHooks {
    std::function<void(int64_t iter)> checkpoint;
    std::function<void(const LossRecord&)> log;
};

// Trains in place on single crops (no tiling). Returns the per-iteration curve.
std::vector<LossRecord> train(SegmentationModel& model, const Dataset& data, const TrainConfig& cfg, uint64_t seed,
                              const TrainHooks& hooks = {});

// Random patch-aligned crop and optional horizontal flip.
BatchItem sample_crop(const Dataset& data, int64_t scene, int64_t crop, bool allow_flip, int patch, Rng& rng);

// One sample's loss against its mask.
LossBreakdown sample_loss(const SegmentationModel& model, const TextEmbeddingSet& texts, const BatchItem& item,
                          const LossConfig& loss);

// Per-scene single-pass predictions.
std::vector<SegMap> predict_dataset(const SegmentationModel& model, const Dataset& data);

double dataset_miou(const SegmentationModel& model, const Dataset& data);

}  // namespace ovseg
