#include "ovseg/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "ovseg/tensor_io.hpp"

namespace ovseg {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const std::string& dir, const SegmentationModel& model, const RunConfig& cfg, int64_t iteration) {
    fs::create_directories(dir);
    json params = json::array();
    for (const auto& p : model.params().params())
        params.push_back({{"name", p.name},
                          {"shape", p.tensor.shape()},
                          {"group", p.group == ParamGroup::Backbone ? "backbone" : "head"}});
    const json manifest{{"format", "ovseg-checkpoint"},
                        {"version", 1},
                        {"iteration", iteration},
                        {"config", to_json(cfg)},
                        {"params", params}};
    std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << "\n";

    std::ofstream out(fs::path(dir) / "weights.ovsg", std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint weights in " + dir);
    const auto n = static_cast<uint32_t>(model.params().params().size());
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& p : model.params().params()) {
        const auto len = static_cast<uint32_t>(p.name.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(p.name.data(), len);
        write_tensor(out, p.tensor);
    }
    if (!out) throw FormatError("checkpoint write failed in " + dir);
}

void load_weights(const std::string& path, SegmentationModel& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path);
    uint32_t n = 0;
    if (!in.read(reinterpret_cast<char*>(&n), 4)) throw FormatError(path + ": truncated");
    std::map<std::string, Tensor> stored;
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t len = 0;
        if (!in.read(reinterpret_cast<char*>(&len), 4) || len > 4096) throw FormatError(path + ": bad record");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw FormatError(path + ": truncated name");
        stored[name] = read_tensor(in);
    }
    auto& params = model.params().params();
    if (stored.size() != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model expects " +
                              std::to_string(params.size()));
    for (auto& p : params) {
        const auto it = stored.find(p.name);
        if (it == stored.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
        if (it->second.shape() != p.tensor.shape())
            throw CheckpointError("parameter " + p.name + ": checkpoint shape " + shape_str(it->second.shape()) +
                                  " vs model shape " + shape_str(p.tensor.shape()));
        const auto src = it->second.data();
        std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
    }
}

LoadedCheckpoint load_checkpoint(const std::string& dir, const std::optional<RunConfig>& model_config) {
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw FormatError("no manifest.json in " + dir);
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    LoadedCheckpoint out;
    out.config = model_config ? *model_config : from_json(manifest.at("config"));
    out.iteration = manifest.value("iteration", int64_t{0});
    out.model = std::make_unique<SegmentationModel>(out.config.model_config());
    load_weights((fs::path(dir) / "weights.ovsg").string(), *out.model);
    return out;
}

}  // namespace ovseg
