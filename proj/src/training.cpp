#include "ovseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ovseg/evaluation.hpp"

namespace ovseg {

namespace {

struct Texture {
    const char* name;
    double r, g, b;
    double angle;   // stripe orientation, radians
    double period;  // pixels
};

const std::vector<Texture>& textures() {
    static const std::vector<Texture> t = {
        {"grass", 0.20, 0.65, 0.20, 0.0, 6.0},       {"sky", 0.45, 0.65, 0.95, 1.5708, 12.0},
        {"brick", 0.70, 0.25, 0.15, 0.7854, 5.0},    {"water", 0.10, 0.30, 0.60, 2.3562, 8.0},
        {"sand", 0.90, 0.80, 0.50, 0.3927, 7.0},     {"snow", 0.95, 0.95, 0.97, 1.1781, 10.0},
        {"wood", 0.55, 0.35, 0.15, 1.9635, 4.0},     {"metal", 0.60, 0.62, 0.66, 2.7489, 9.0},
        {"leaves", 0.35, 0.50, 0.10, 0.5236, 5.5},   {"road", 0.25, 0.25, 0.28, 2.0944, 11.0},
        {"flower", 0.90, 0.30, 0.60, 1.0472, 4.5},   {"rock", 0.45, 0.40, 0.35, 2.6180, 6.5},
    };
    return t;
}

}  // namespace

const std::vector<std::string>& texture_vocabulary() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& t : textures()) out.emplace_back(t.name);
        return out;
    }();
    return names;
}

SyntheticScene generate_scene(uint64_t seed, int64_t n_classes, int64_t size, int patch) {
    if (n_classes < 2) throw ArgumentError("generate_scene: n_classes must be >= 2");
    if (n_classes > static_cast<int64_t>(textures().size()))
        throw ArgumentError("generate_scene: at most " + std::to_string(textures().size()) + " classes");
    if (patch < 1 || size < patch || size % patch != 0)
        throw ArgumentError("generate_scene: size " + std::to_string(size) + " is not a multiple of patch " +
                            std::to_string(patch));
    Rng rng(seed);
    const int64_t g = size / patch;
    const int64_t min_pixels = (size * size + 99) / 100;
    std::vector<int32_t> cells(static_cast<size_t>(g * g));
    for (int attempt = 0;; ++attempt) {
        if (attempt == 200) throw NumericError("generate_scene: could not place every class");
        const int64_t n_seeds = n_classes + 2;
        std::vector<double> sy(n_seeds), sx(n_seeds);
        std::vector<int32_t> lab(n_seeds);
        for (int64_t i = 0; i < n_seeds; ++i) {
            sy[i] = rng.uniform(0.0, static_cast<double>(g));
            sx[i] = rng.uniform(0.0, static_cast<double>(g));
            lab[i] = static_cast<int32_t>(i < n_classes ? i : rng.below(static_cast<uint64_t>(n_classes)));
        }
        std::vector<int64_t> area(static_cast<size_t>(n_classes), 0);
        for (int64_t y = 0; y < g; ++y)
            for (int64_t x = 0; x < g; ++x) {
                int64_t best = 0;
                double bd = 1e300;
                for (int64_t i = 0; i < n_seeds; ++i) {
                    const double dy = y + 0.5 - sy[i], dx = x + 0.5 - sx[i];
                    const double d = dy * dy + dx * dx;
                    if (d < bd) {
                        bd = d;
                        best = i;
                    }
                }
                cells[static_cast<size_t>(y * g + x)] = lab[best];
                area[static_cast<size_t>(lab[best])] += patch * patch;
            }
        if (std::all_of(area.begin(), area.end(), [&](int64_t a) { return a >= min_pixels; })) break;
    }

    SyntheticScene scene;
    scene.class_names.assign(texture_vocabulary().begin(), texture_vocabulary().begin() + n_classes);
    scene.mask.height = scene.mask.width = size;
    scene.mask.labels.resize(static_cast<size_t>(size * size));
    std::vector<double> pix(static_cast<size_t>(3 * size * size));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const auto label = cells[static_cast<size_t>((y / patch) * g + x / patch)];
            scene.mask.labels[static_cast<size_t>(y * size + x)] = label;
            const auto& t = textures()[static_cast<size_t>(label)];
            const double u = x * std::cos(t.angle) + y * std::sin(t.angle);
            const double stripe = 0.12 * std::sin(2.0 * std::numbers::pi * u / t.period + phase);
            const double rgb[3] = {t.r, t.g, t.b};
            for (int c = 0; c < 3; ++c) {
                const double v = rgb[c] + stripe + 0.03 * (rng.uniform() - 0.5);
                pix[static_cast<size_t>((c * size + y) * size + x)] = std::clamp(v, 0.0, 1.0);
            }
        }
    scene.image = make_image(Tensor::from({3, size, size}, std::move(pix)));
    return scene;
}

Dataset synthetic_dataset(uint64_t seed, int64_t n_scenes, int64_t n_classes, int64_t size, int patch) {
    Dataset d;
    d.class_names.assign(texture_vocabulary().begin(), texture_vocabulary().begin() + n_classes);
    for (int64_t i = 0; i < n_scenes; ++i)
        d.scenes.push_back(generate_scene(seed * 1000003ULL + static_cast<uint64_t>(i), n_classes, size, patch));
    return d;
}

void TrainConfig::validate(int patch) const {
    if (!(lr_backbone > 0) || !(lr_head > 0)) throw ConfigError("train learning rates must be > 0");
    if (lr_floor < 0) throw ConfigError("train.lr_floor must be >= 0");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train betas must be in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (iters < 1) throw ConfigError("train.iters must be >= 1");
    if (crop < patch || crop % patch != 0)
        throw ConfigError("train.crop (" + std::to_string(crop) + ") must be a positive multiple of the patch size " +
                          std::to_string(patch));
    if (checkpoint_every < 0 || log_every < 0) throw ConfigError("train intervals must be >= 0");
    loss.validate();
}

LossConfig TrainConfig::effective_loss() const {
    if (toggles.focal_dice) return loss;
    LossConfig bce = loss;
    bce.gamma = 0.0;
    bce.lambda = 0.0;
    return bce;
}

void TrainConfig::apply_toggles(ModelConfig& model) const {
    model.text_ensemble = toggles.text_ensemble;
    model.early_refine = toggles.early_refine;
}

double cosine_lr(double base, int64_t it, int64_t iters, double floor) {
    const double t = std::clamp(static_cast<double>(it) / static_cast<double>(iters), 0.0, 1.0);
    return floor + (base - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::pair<int64_t, int64_t> check_param_groups(const ParamStore& store) {
    int64_t backbone = 0, head = 0;
    for (const auto& p : store.params()) {
        if (p.group == ParamGroup::Backbone)
            backbone += p.tensor.numel();
        else if (p.group == ParamGroup::Head)
            head += p.tensor.numel();
        else
            throw ConfigError("parameter " + p.name + " has no learning-rate group");
        if (!p.tensor.requires_grad()) throw ConfigError("parameter " + p.name + " is not trainable");
    }
    if (backbone + head != store.total_size()) throw ConfigError("parameter groups do not cover the model");
    return {backbone, head};
}

AdamW::AdamW(ParamStore& store, const TrainConfig& cfg)
    : store_(&store), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), wd_(cfg.weight_decay) {
    for (const auto& p : store.params()) {
        m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
}

void AdamW::step(double lr_backbone, double lr_head) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& params = store_->params();
    for (size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const double lr = p.group == ParamGroup::Backbone ? lr_backbone : lr_head;
        const bool decay = p.tensor.rank() >= 2;
        auto w = p.tensor.mutable_data();
        const auto g = p.tensor.grad();
        if (g.empty()) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            if (decay) w[i] -= lr * wd_ * w[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

NonFiniteLossError::NonFiniteLossError(int64_t it, std::vector<BatchItem> b)
    : NumericError("non-finite loss at iteration " + std::to_string(it)), iteration(it), batch(std::move(b)) {}

BatchItem sample_crop(const Dataset& data, int64_t scene, int64_t crop, bool allow_flip, int patch, Rng& rng) {
    const auto& s = data.scenes[static_cast<size_t>(scene)];
    const int64_t H = s.image.height(), W = s.image.width();
    const int64_t ch = std::min(crop, H), cw = std::min(crop, W);
    BatchItem item;
    item.scene = scene;
    item.row = patch * static_cast<int64_t>(rng.below(static_cast<uint64_t>((H - ch) / patch + 1)));
    item.col = patch * static_cast<int64_t>(rng.below(static_cast<uint64_t>((W - cw) / patch + 1)));
    item.flipped = allow_flip && rng.uniform() < 0.5;
    std::vector<double> pix(static_cast<size_t>(3 * ch * cw));
    item.mask.height = ch;
    item.mask.width = cw;
    item.mask.labels.resize(static_cast<size_t>(ch * cw));
    const auto src = s.image.data.data();
    for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x) {
            const int64_t sx = item.col + (item.flipped ? cw - 1 - x : x), sy = item.row + y;
            for (int64_t c = 0; c < 3; ++c)
                pix[static_cast<size_t>((c * ch + y) * cw + x)] = src[static_cast<size_t>((c * H + sy) * W + sx)];
            item.mask.labels[static_cast<size_t>(y * cw + x)] = s.mask.at(sy, sx);
        }
    item.image = make_image(Tensor::from({3, ch, cw}, std::move(pix)));
    return item;
}

LossBreakdown sample_loss(const SegmentationModel& model, const TextEmbeddingSet& texts, const BatchItem& item,
                          const LossConfig& loss) {
    const auto logits = model.forward(item.image, texts);
    const auto target = one_hot(item.mask.labels, texts.size(), item.mask.height, item.mask.width);
    return combined_loss(sigmoid(logits.data), target, loss);
}

std::vector<LossRecord> train(SegmentationModel& model, const Dataset& data, const TrainConfig& cfg, uint64_t seed,
                              const TrainHooks& hooks) {
    const int patch = model.config().encoder.patch_size;
    cfg.validate(patch);
    if (data.scenes.empty()) throw ArgumentError("train: dataset is empty");
    if (data.class_names.empty()) throw ArgumentError("train: dataset has no classes");
    if (model.config().text_ensemble != cfg.toggles.text_ensemble ||
        model.config().early_refine != cfg.toggles.early_refine)
        throw ConfigError("train: model toggles differ from train.toggles");
    check_param_groups(model.params());
    const auto loss_cfg = cfg.effective_loss();

    Rng rng(seed);
    AdamW opt(model.params(), cfg);
    std::vector<int64_t> order;
    size_t cursor = 0;
    auto next_scene = [&] {
        if (cursor == order.size()) {
            order.resize(data.scenes.size());
            std::iota(order.begin(), order.end(), 0);
            for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    std::vector<LossRecord> curve;
    for (int64_t it = 0; it < cfg.iters; ++it) {
        const double lr_b = cosine_lr(cfg.lr_backbone, it, cfg.iters, cfg.lr_floor);
        const double lr_h = cosine_lr(cfg.lr_head, it, cfg.iters, cfg.lr_floor);
        std::vector<BatchItem> batch;
        for (int64_t b = 0; b < cfg.batch; ++b) batch.push_back(sample_crop(data, next_scene(), cfg.crop, cfg.hflip, patch, rng));

        model.params().zero_grad();
        const auto texts = model.encode_text(data.class_names);
        LossRecord rec;
        rec.iter = it;
        rec.lr_backbone = lr_b;
        rec.lr_head = lr_h;
        Tensor total;
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (const auto& item : batch) {
            auto l = sample_loss(model, texts, item, loss_cfg);
            rec.focal += l.focal * inv;
            rec.dice += l.dice * inv;
            total = total.defined() ? add(total, l.total) : l.total;
        }
        total = scale(total, inv);
        rec.combined = total.item();
        if (!std::isfinite(rec.combined)) throw NonFiniteLossError(it, std::move(batch));
        // One backward over the whole batch: the text embeddings are shared.
        total.backward();
        opt.step(lr_b, lr_h);
        curve.push_back(rec);
        if (hooks.log && (cfg.log_every == 0 || it % cfg.log_every == 0 || it + 1 == cfg.iters)) hooks.log(rec);
        if (hooks.checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) hooks.checkpoint(it + 1);
    }
    return curve;
}

std::vector<SegMap> predict_dataset(const SegmentationModel& model, const Dataset& data) {
    NoGradGuard no_grad;
    const auto texts = model.encode_text(data.class_names);
    std::vector<SegMap> out;
    for (const auto& s : data.scenes) out.push_back(predict(model.forward(s.image, texts)));
    return out;
}

double dataset_miou(const SegmentationModel& model, const Dataset& data) {
    std::vector<SegMap> targets;
    for (const auto& s : data.scenes) targets.push_back(s.mask);
    return miou(predict_dataset(model, data), targets, static_cast<int64_t>(data.class_names.size())).mean;
}

}  // namespace ovseg
