#pragma once

// Checkpoint directory: manifest.json (run config, parameter table) and
// weights.ovsg (parameter count, then name + tensor records in store order).

#include <memory>
#include <optional>
#include <string>

#include "ovseg/config.hpp"

namespace ovseg {

// Stored parameters do not fit the model built from the config.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& dir, const SegmentationModel& model, const RunConfig& cfg,
                     int64_t iteration = 0);

struct LoadedCheckpoint {
    RunConfig config;
    std::unique_ptr<SegmentationModel> model;
    int64_t iteration = 0;
};

// With `model_config` set, that architecture is built and the stored weights
// must match it; otherwise the manifest's config is used.
LoadedCheckpoint load_checkpoint(const std::string& dir, const std::optional<RunConfig>& model_config = std::nullopt);

// Copies named weights into `model`; throws CheckpointError on any name or
// shape disagreement.
void load_weights(const std::string& path, SegmentationModel& model);

}  // namespace ovseg
