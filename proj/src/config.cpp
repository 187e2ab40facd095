#include "ovseg/config.hpp"

#include <fstream>
#include <sstream>

namespace ovseg {

using nlohmann::json;

void RunConfig::validate() const {
    model_config().validate();
    train.validate(model.encoder.patch_size);
    infer.validate();
    if (infer.resize % model.encoder.patch_size != 0 || infer.window % model.encoder.patch_size != 0 ||
        infer.overlap % model.encoder.patch_size != 0)
        throw ConfigError("infer.resize, infer.window and infer.overlap must be multiples of model.patch_size");
    if (data.scenes < 1) throw ConfigError("data.scenes must be >= 1");
    if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data.size < model.encoder.patch_size || data.size % model.encoder.patch_size != 0)
        throw ConfigError("data.size must be a multiple of model.patch_size");
    // Feature grids entering the late refinement must tile into spatial windows.
    const auto grid_ok = [&](int64_t pixels) {
        const int64_t g = pixels / model.encoder.patch_size, w = model.spatial_window;
        return g <= w || g % w == 0;
    };
    if (!grid_ok(infer.resize)) throw ConfigError("infer.resize / model.patch_size must be a multiple of model.spatial_window");
    if (!grid_ok(train.crop)) throw ConfigError("train.crop / model.patch_size must be a multiple of model.spatial_window");
    if (!grid_ok(data.size)) throw ConfigError("data.size / model.patch_size must be a multiple of model.spatial_window");
    if (!(eval.threshold > -1.0)) throw ConfigError("eval.threshold must be > -1");
    if (eval.ridge_alpha < 0) throw ConfigError("eval.ridge_alpha must be >= 0");
    if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.seed = seed;
    train.apply_toggles(m);
    return m;
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"desk", "paper"};
    return names;
}

RunConfig preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "desk") return c;
    if (name == "paper") {
        c.train.lr_backbone = 2e-6;
        c.train.lr_head = 2e-4;
        c.train.iters = 80000;
        c.train.batch = 4;
        c.train.crop = 384;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace {

std::string arch_name(VisionArch a) { return a == VisionArch::Linear ? "linear" : "vit"; }

VisionArch parse_arch(const std::string& s) {
    if (s == "vit") return VisionArch::Vit;
    if (s == "linear") return VisionArch::Linear;
    throw ConfigError("model.vision_arch must be \"vit\" or \"linear\", got \"" + s + "\"");
}

// 1-based line of the first occurrence of "key" in the source, or 0.
int line_of(const std::string& text, const std::string& key) {
    if (text.empty()) return 0;
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    int line = 1;
    for (size_t i = 0; i < pos; ++i) line += text[i] == '\n';
    return line;
}

std::string where(const std::string& text, const std::string& key, const std::string& path) {
    const int line = line_of(text, key);
    return (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + path;
}

// Rejects keys absent from the template and values of the wrong JSON kind.
void check_schema(const json& tmpl, const json& in, const std::string& prefix, const std::string& text) {
    if (!in.is_object()) throw ConfigError(where(text, prefix, prefix.empty() ? "config" : prefix) + " must be an object");
    for (const auto& [key, value] : in.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!tmpl.contains(key)) throw ConfigError(where(text, key, path) + ": unknown key");
        const auto& t = tmpl.at(key);
        const bool ok = (t.is_object() && value.is_object()) || (t.is_boolean() && value.is_boolean()) ||
                        (t.is_string() && value.is_string()) ||
                        (t.is_number_integer() && value.is_number_integer()) ||
                        (t.is_number_float() && value.is_number());
        if (!ok) throw ConfigError(where(text, key, path) + ": expected " + std::string(t.type_name()) + ", got " +
                                   value.type_name());
        if (t.is_object()) check_schema(t, value, path, text);
    }
}

}  // namespace

json to_json(const RunConfig& c) {
    const auto& e = c.model.encoder;
    const auto& t = c.train;
    return json{
        {"preset", c.preset},
        {"seed", c.seed},
        {"model",
         {{"patch_size", e.patch_size},
          {"vision_dim", e.vision_dim},
          {"vision_arch", arch_name(e.vision_arch)},
          {"vision_heads", e.vision_heads},
          {"spe_dim", e.spe_dim},
          {"spe_heads", e.spe_heads},
          {"text_hash_dim", e.text_hash_dim},
          {"text_hidden", e.text_hidden},
          {"text_ngram", e.text_ngram},
          {"prompt_template", e.prompt_template},
          {"refiner_conv_dim", c.model.refiner_conv_dim},
          {"refiner_qk_dim", c.model.refiner_qk_dim},
          {"refiner_window", c.model.refiner_window},
          {"refiner_heads", c.model.refiner_heads},
          {"corr_dim", c.model.corr_dim},
          {"late_stages", c.model.late_stages},
          {"spatial_window", c.model.spatial_window},
          {"spatial_heads", c.model.spatial_heads},
          {"class_heads", c.model.class_heads},
          {"mlp_ratio", c.model.mlp_ratio},
          {"decoder_width1", c.model.decoder_width1},
          {"decoder_width2", c.model.decoder_width2}}},
        {"train",
         {{"lr_backbone", t.lr_backbone},
          {"lr_head", t.lr_head},
          {"lr_floor", t.lr_floor},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"batch", t.batch},
          {"iters", t.iters},
          {"crop", t.crop},
          {"hflip", t.hflip},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every", t.log_every},
          {"loss", {{"lambda", t.loss.lambda}, {"gamma", t.loss.gamma}, {"dice_eps", t.loss.dice_eps}}},
          {"toggles",
           {{"text_ensemble", t.toggles.text_ensemble},
            {"early_refine", t.toggles.early_refine},
            {"focal_dice", t.toggles.focal_dice}}}}},
        {"data", {{"dir", c.data.dir}, {"scenes", c.data.scenes}, {"classes", c.data.classes}, {"size", c.data.size}}},
        {"infer",
         {{"resize", c.infer.resize},
          {"window", c.infer.window},
          {"overlap", c.infer.overlap},
          {"lga_vlm", c.infer.lga_vlm},
          {"lga_spe", c.infer.lga_spe}}},
        {"eval",
         {{"threshold", c.eval.threshold},
          {"ridge_alpha", c.eval.ridge_alpha},
          {"folds", c.eval.folds},
          {"ignore_label", c.eval.ignore_label}}},
    };
}

RunConfig from_json(const json& in, const std::string& text) {
    const std::string name = in.is_object() && in.contains("preset") && in.at("preset").is_string()
                                 ? in.at("preset").get<std::string>()
                                 : "desk";
    const json tmpl = to_json(preset(name));
    check_schema(tmpl, in, "", text);
    json j = tmpl;
    j.merge_patch(in);

    RunConfig c = preset(name);
    const auto& m = j.at("model");
    auto& e = c.model.encoder;
    c.seed = j.at("seed").get<uint64_t>();
    e.patch_size = m.at("patch_size").get<int>();
    e.vision_dim = m.at("vision_dim").get<int64_t>();
    e.vision_arch = parse_arch(m.at("vision_arch").get<std::string>());
    e.vision_heads = m.at("vision_heads").get<int64_t>();
    e.spe_dim = m.at("spe_dim").get<int64_t>();
    e.spe_heads = m.at("spe_heads").get<int64_t>();
    e.text_hash_dim = m.at("text_hash_dim").get<int64_t>();
    e.text_hidden = m.at("text_hidden").get<int64_t>();
    e.text_ngram = m.at("text_ngram").get<int>();
    e.prompt_template = m.at("prompt_template").get<std::string>();
    c.model.refiner_conv_dim = m.at("refiner_conv_dim").get<int64_t>();
    c.model.refiner_qk_dim = m.at("refiner_qk_dim").get<int64_t>();
    c.model.refiner_window = m.at("refiner_window").get<int64_t>();
    c.model.refiner_heads = m.at("refiner_heads").get<int64_t>();
    c.model.corr_dim = m.at("corr_dim").get<int64_t>();
    c.model.late_stages = m.at("late_stages").get<int64_t>();
    c.model.spatial_window = m.at("spatial_window").get<int64_t>();
    c.model.spatial_heads = m.at("spatial_heads").get<int64_t>();
    c.model.class_heads = m.at("class_heads").get<int64_t>();
    c.model.mlp_ratio = m.at("mlp_ratio").get<int64_t>();
    c.model.decoder_width1 = m.at("decoder_width1").get<int64_t>();
    c.model.decoder_width2 = m.at("decoder_width2").get<int64_t>();

    const auto& t = j.at("train");
    c.train.lr_backbone = t.at("lr_backbone").get<double>();
    c.train.lr_head = t.at("lr_head").get<double>();
    c.train.lr_floor = t.at("lr_floor").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.beta1 = t.at("beta1").get<double>();
    c.train.beta2 = t.at("beta2").get<double>();
    c.train.adam_eps = t.at("adam_eps").get<double>();
    c.train.batch = t.at("batch").get<int64_t>();
    c.train.iters = t.at("iters").get<int64_t>();
    c.train.crop = t.at("crop").get<int64_t>();
    c.train.hflip = t.at("hflip").get<bool>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int64_t>();
    c.train.log_every = t.at("log_every").get<int64_t>();
    c.train.loss.lambda = t.at("loss").at("lambda").get<double>();
    c.train.loss.gamma = t.at("loss").at("gamma").get<double>();
    c.train.loss.dice_eps = t.at("loss").at("dice_eps").get<double>();
    c.train.toggles.text_ensemble = t.at("toggles").at("text_ensemble").get<bool>();
    c.train.toggles.early_refine = t.at("toggles").at("early_refine").get<bool>();
    c.train.toggles.focal_dice = t.at("toggles").at("focal_dice").get<bool>();

    const auto& d = j.at("data");
    c.data.dir = d.at("dir").get<std::string>();
    c.data.scenes = d.at("scenes").get<int64_t>();
    c.data.classes = d.at("classes").get<int64_t>();
    c.data.size = d.at("size").get<int64_t>();

    const auto& i = j.at("infer");
    c.infer.resize = i.at("resize").get<int64_t>();
    c.infer.window = i.at("window").get<int64_t>();
    c.infer.overlap = i.at("overlap").get<int64_t>();
    c.infer.lga_vlm = i.at("lga_vlm").get<bool>();
    c.infer.lga_spe = i.at("lga_spe").get<bool>();

    const auto& ev = j.at("eval");
    c.eval.threshold = ev.at("threshold").get<double>();
    c.eval.ridge_alpha = ev.at("ridge_alpha").get<double>();
    c.eval.folds = ev.at("folds").get<int64_t>();
    c.eval.ignore_label = ev.at("ignore_label").get<int32_t>();

    c.validate();
    return c;
}

namespace {

json override_value(const json& current, const std::string& key, const std::string& raw) {
    try {
        if (current.is_boolean()) {
            if (raw == "true" || raw == "1") return true;
            if (raw == "false" || raw == "0") return false;
            throw ConfigError("override " + key + ": expected true or false, got '" + raw + "'");
        }
        if (current.is_number_integer()) {
            size_t used = 0;
            const long long v = std::stoll(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        }
        if (current.is_number_float()) {
            size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("override " + key + ": cannot parse '" + raw + "' as a number");
    }
    return raw;
}

void apply_overrides(json& j, const std::vector<std::pair<std::string, std::string>>& overrides) {
    if (overrides.empty()) return;
    // Unknown keys are caught against the template of the (possibly overridden) preset.
    std::string name = j.value("preset", std::string("desk"));
    for (const auto& [key, raw] : overrides)
        if (key == "preset") name = raw;
    const json tmpl = to_json(preset(name));
    for (const auto& [key, raw] : overrides) {
        json::json_pointer ptr("/" + [&] {
            std::string s = key;
            for (auto& ch : s)
                if (ch == '.') ch = '/';
            return s;
        }());
        if (!tmpl.contains(ptr) || tmpl.at(ptr).is_object()) throw ConfigError("override " + key + ": unknown key");
        j[ptr] = override_value(tmpl.at(ptr), key, raw);
    }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::vector<std::pair<std::string, std::string>>& overrides) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        int line = 1;
        for (size_t i = 0; i < std::min(e.byte, text.size()); ++i) line += text[i] == '\n';
        throw ConfigError("line " + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("line 1: config must be a JSON object");
    apply_overrides(j, overrides);
    try {
        return from_json(j, text);
    } catch (const json::exception& e) {
        throw ConfigError(e.what());
    }
}

RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), overrides);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

RunConfig default_config(const std::string& preset_name,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    json j = json{{"preset", preset_name}};
    apply_overrides(j, overrides);
    return from_json(j);
}

}  // namespace ovseg
