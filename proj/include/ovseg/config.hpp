#pragma once

// Run configuration: JSON with strict keys, named presets and dotted-key
// overrides (`train.iters=50`). Precedence: preset < file < override.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ovseg/lga.hpp"
#include "ovseg/training.hpp"

namespace ovseg {

struct DataConfig {
    std::string dir;  // empty: synthetic scenes
    int64_t scenes = 8;
    int64_t classes = 4;
    int64_t size = 384;
};

struct EvalConfig {
    double threshold = 0.9;
    double ridge_alpha = 1.0;
    int64_t folds = 5;
    int32_t ignore_label = 255;
};

struct RunConfig {
    std::string preset = "desk";
    uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    LgaConfig infer;
    EvalConfig eval;

    void validate() const;
    // Model config with the run seed and train toggles applied.
    ModelConfig model_config() const;
};

const std::vector<std::string>& preset_names();
RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
// Throws ConfigError; messages carry "line N" when the source text is known.
RunConfig from_json(const nlohmann::json& j, const std::string& source_text = "");

RunConfig parse_config(const std::string& text, const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig default_config(const std::string& preset_name,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace ovseg
