// ovseg command-line front end.
//
// Exit codes: 0 success, 1 unreadable/missing input, 2 invalid config or
// arguments, 3 non-finite training loss, 4 checkpoint/model mismatch.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ovseg/checkpoint.hpp"
#include "ovseg/config.hpp"
#include "ovseg/evaluation.hpp"
#include "ovseg/image_io.hpp"
#include "ovseg/lga.hpp"
#include "ovseg/tensor_io.hpp"
#include "ovseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ovseg;

namespace {

enum Exit { kOk = 0, kIo = 1, kInvalid = 2, kNonFinite = 3, kMismatch = 4 };

// Failure carrying its exit code.
struct CliError : std::runtime_error {
    CliError(int code_, const std::string& msg) : std::runtime_error(msg), code(code_) {}
    int code;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

// `--section.key value` / `--section.key=value` pairs left over by CLI11.
Overrides parse_overrides(const std::vector<std::string>& extras) {
    Overrides out;
    for (size_t i = 0; i < extras.size(); ++i) {
        const auto& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw CliError(kInvalid, "unexpected argument '" + a + "'");
        auto key = a.substr(2);
        if (const auto eq = key.find('='); eq != std::string::npos) {
            out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
            continue;
        }
        if (i + 1 >= extras.size()) throw CliError(kInvalid, "missing value for --" + key);
        out.emplace_back(key, extras[++i]);
    }
    return out;
}

RunConfig resolve_config(const std::string& path, const std::string& preset_name, const Overrides& overrides) {
    if (!path.empty()) {
        if (!fs::exists(path)) throw CliError(kIo, "config file not found: " + path);
        auto ov = overrides;
        if (!preset_name.empty()) ov.insert(ov.begin(), {"preset", preset_name});
        return load_config(path, ov);
    }
    return default_config(preset_name.empty() ? "desk" : preset_name, overrides);
}

std::vector<std::string> parse_classes(const std::string& spec) {
    std::vector<std::string> out;
    auto push = [&](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        if (!s.empty()) out.push_back(s);
    };
    if (!spec.empty() && fs::is_regular_file(spec)) {
        std::ifstream in(spec);
        for (std::string line; std::getline(in, line);) push(line);
    } else {
        std::stringstream ss(spec);
        for (std::string item; std::getline(ss, item, ',');) push(item);
    }
    if (out.empty()) throw CliError(kInvalid, "class list is empty");
    return out;
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

// Image/mask pairs by file name from <dir>/images and <dir>/masks, class
// names from <dir>/classes.txt.
Dataset load_dataset_dir(const std::string& dir) {
    Dataset d;
    const fs::path root(dir);
    if (!fs::exists(root / "classes.txt")) throw CliError(kIo, "missing " + (root / "classes.txt").string());
    d.class_names = parse_classes((root / "classes.txt").string());
    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(root / "images"))
        if (e.path().extension() == ".png") images.push_back(e.path());
    std::sort(images.begin(), images.end());
    for (const auto& p : images) {
        const auto mask_path = root / "masks" / p.filename();
        if (!fs::exists(mask_path)) throw CliError(kInvalid, "no mask for " + p.filename().string());
        SyntheticScene s{read_png(p.string()), read_label_png(mask_path.string()), d.class_names};
        if (s.mask.height != s.image.height() || s.mask.width != s.image.width())
            throw CliError(kInvalid, "mask size differs from image: " + p.filename().string());
        d.scenes.push_back(std::move(s));
    }
    if (d.scenes.empty()) throw CliError(kInvalid, "no training images in " + (root / "images").string());
    return d;
}

void dump_batch(const fs::path& dir, const NonFiniteLossError& e) {
    fs::create_directories(dir);
    json items = json::array();
    for (size_t i = 0; i < e.batch.size(); ++i) {
        const auto& b = e.batch[i];
        const auto stem = "item" + std::to_string(i);
        write_png((dir / (stem + "_image.png")).string(), b.image);
        write_label_png((dir / (stem + "_mask.png")).string(), b.mask);
        items.push_back({{"scene", b.scene}, {"row", b.row}, {"col", b.col}, {"flipped", b.flipped}});
    }
    std::ofstream(dir / "batch.json") << json{{"iteration", e.iteration}, {"items", items}}.dump(2) << "\n";
}

int cmd_train(const std::string& config_path, const std::string& preset_name, const std::string& out_dir,
              const Overrides& overrides) {
    const auto cfg = resolve_config(config_path, preset_name, overrides);
    const int patch = cfg.model.encoder.patch_size;
    const auto data = cfg.data.dir.empty()
                          ? synthetic_dataset(cfg.seed, cfg.data.scenes, cfg.data.classes, cfg.data.size, patch)
                          : load_dataset_dir(cfg.data.dir);
    fs::create_directories(out_dir);
    SegmentationModel model(cfg.model_config());
    const auto ckpt_dir = (fs::path(out_dir) / "checkpoint").string();
    TrainHooks hooks;
    hooks.checkpoint = [&](int64_t it) { save_checkpoint(ckpt_dir, model, cfg, it); };
    hooks.log = [&](const LossRecord& r) {
        std::cerr << "iter " << r.iter << " loss " << r.combined << " focal " << r.focal << " dice " << r.dice << "\n";
    };
    std::vector<LossRecord> curve;
    try {
        curve = train(model, data, cfg.train, cfg.seed, hooks);
    } catch (const NonFiniteLossError& e) {
        const auto dump = fs::path(out_dir) / "nonfinite_batch";
        dump_batch(dump, e);
        throw CliError(kNonFinite, std::string(e.what()) + " (batch dumped to " + dump.string() + ")");
    }
    save_checkpoint(ckpt_dir, model, cfg, cfg.train.iters);
    {
        std::ofstream csv(fs::path(out_dir) / "loss.csv");
        csv << "iter,focal,dice,combined,lr_backbone,lr_head\n";
        csv.precision(17);
        for (const auto& r : curve)
            csv << r.iter << "," << r.focal << "," << r.dice << "," << r.combined << "," << r.lr_backbone << ","
                << r.lr_head << "\n";
    }
    json report{{"iterations", cfg.train.iters},
                {"initial_loss", curve.front().combined},
                {"final_loss", curve.back().combined},
                {"checkpoint", ckpt_dir},
                {"loss_csv", (fs::path(out_dir) / "loss.csv").string()}};
    if (cfg.data.dir.empty()) report["train_miou"] = dataset_miou(model, data);
    emit(report);
    return kOk;
}

LoadedCheckpoint open_checkpoint(const std::string& dir, const std::string& config_path, const std::string& preset_name,
                                 const Overrides& overrides) {
    if (!fs::exists(fs::path(dir) / "manifest.json")) throw CliError(kIo, "no checkpoint at " + dir);
    if (config_path.empty() && preset_name.empty()) {
        auto ck = load_checkpoint(dir);
        if (overrides.empty()) return ck;
        // Overrides apply on top of the stored config.
        auto cfg = parse_config(to_json(ck.config).dump(), overrides);
        return load_checkpoint(dir, cfg);
    }
    return load_checkpoint(dir, resolve_config(config_path, preset_name, overrides));
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, const std::string& classes_spec,
              const std::string& out_dir, const std::string& config_path, const std::string& preset_name,
              std::optional<bool> lga, bool probs, const Overrides& overrides) {
    const auto classes = parse_classes(classes_spec);
    if (!fs::exists(image_path)) throw CliError(kIo, "image not found: " + image_path);
    auto loaded = open_checkpoint(ckpt, config_path, preset_name, overrides);
    auto lcfg = loaded.config.infer;
    if (lga) lcfg.lga_vlm = *lga;
    const auto image = read_png(image_path);
    const auto result = infer_logits(image, *loaded.model, classes, lcfg);
    fs::create_directories(out_dir);
    const auto index_png = (fs::path(out_dir) / "index.png").string();
    const auto color_png = (fs::path(out_dir) / "color.png").string();
    write_label_png(index_png, result.segmap);
    write_color_png(color_png, result.segmap);
    json report{{"classes", classes},
                {"height", result.segmap.height},
                {"width", result.segmap.width},
                {"lga_vlm", lcfg.lga_vlm},
                {"lga_spe", lcfg.lga_spe},
                {"index_png", index_png},
                {"color_png", color_png}};
    if (probs) {
        const auto path = (fs::path(out_dir) / "probs.ovsg").string();
        save_tensor(path, result.segmap.probs);
        report["probs"] = path;
    }
    std::vector<int64_t> hist(classes.size(), 0);
    for (auto l : result.segmap.labels) ++hist[static_cast<size_t>(l)];
    report["pixels_per_class"] = hist;
    emit(report);
    return kOk;
}

json iou_json(const std::vector<std::optional<double>>& v, const std::vector<std::string>& names) {
    json out = json::object();
    for (size_t i = 0; i < v.size(); ++i) out[names[i]] = v[i] ? json(*v[i]) : json(nullptr);
    return out;
}

std::vector<int64_t> class_indices(const json& list, const std::vector<std::string>& names) {
    std::vector<int64_t> out;
    for (const auto& item : list) {
        if (item.is_number_integer()) {
            out.push_back(item.get<int64_t>());
            continue;
        }
        const auto it = std::find(names.begin(), names.end(), item.get<std::string>());
        if (it == names.end()) throw CliError(kInvalid, "partition names unknown class " + item.dump());
        out.push_back(it - names.begin());
    }
    return out;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& classes_spec,
             const std::string& partition_path, int ignore) {
    const auto classes = parse_classes(classes_spec);
    for (const auto& d : {pred_dir, gt_dir})
        if (!fs::is_directory(d)) throw CliError(kIo, "not a directory: " + d);
    auto list = [](const std::string& dir) {
        std::set<std::string> names;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".png") names.insert(e.path().filename().string());
        return names;
    };
    const auto preds = list(pred_dir), gts = list(gt_dir);
    std::vector<std::string> orphans;
    for (const auto& p : preds)
        if (!gts.count(p)) orphans.push_back(fs::path(pred_dir) / p);
    for (const auto& g : gts)
        if (!preds.count(g)) orphans.push_back(fs::path(gt_dir) / g);
    if (!orphans.empty()) {
        std::string msg = "unpaired files:";
        for (const auto& o : orphans) msg += "\n  " + o;
        throw CliError(kInvalid, msg);
    }
    if (preds.empty()) throw CliError(kInvalid, "no PNG files to evaluate");
    ConfusionMatrix cm(static_cast<int64_t>(classes.size()), ignore);
    for (const auto& name : preds)
        cm.add(read_label_png((fs::path(pred_dir) / name).string()), read_label_png((fs::path(gt_dir) / name).string()));
    const auto r = miou(cm);
    json report{{"images", preds.size()}, {"miou", r.mean}, {"per_class_iou", iou_json(r.per_class, classes)},
                {"pixels", cm.total()}};
    if (!partition_path.empty()) {
        std::ifstream in(partition_path);
        if (!in) throw CliError(kIo, "cannot read partition file " + partition_path);
        json pj;
        try {
            pj = json::parse(in);
        } catch (const json::exception& e) {
            throw CliError(kInvalid, partition_path + ": " + e.what());
        }
        ClassPartition part;
        part.seen = class_indices(pj.value("seen", json::array()), classes);
        part.unseen = class_indices(pj.value("unseen", json::array()), classes);
        const auto [seen, unseen] = subset_miou(cm, part);
        report["seen_miou"] = seen ? json(*seen) : json(nullptr);
        report["unseen_miou"] = unseen ? json(*unseen) : json(nullptr);
    }
    emit(report);
    return kOk;
}

PrototypeSet read_prototypes(const std::string& path) {
    if (!fs::exists(path)) throw CliError(kIo, "embedding file not found: " + path);
    auto [m, names] = load_embeddings(path);
    PrototypeSet p;
    p.vectors = std::move(m);
    p.class_names = std::move(names);
    for (int64_t i = 0; i < p.vectors.rows(); ++i) p.class_ids.push_back(i);
    return p;
}

int cmd_partition(const std::string& train_path, const std::string& test_path, double threshold,
                  const std::string& mode) {
    const auto train = read_prototypes(train_path), test = read_prototypes(test_path);
    if (train.vectors.cols() != test.vectors.cols())
        throw CliError(kInvalid, "embedding widths differ: " + std::to_string(train.vectors.cols()) + " vs " +
                                     std::to_string(test.vectors.cols()));
    const auto part =
        partition_classes(train, test, threshold, mode == "textual" ? PartitionMode::Textual : PartitionMode::Visual);
    auto names = [&](const std::vector<int64_t>& ids) {
        json a = json::array();
        for (auto i : ids) a.push_back(test.class_names[static_cast<size_t>(i)]);
        return a;
    };
    emit({{"mode", mode},
          {"threshold", threshold},
          {"seen", names(part.seen)},
          {"unseen", names(part.unseen)},
          {"seen_count", part.seen.size()},
          {"unseen_count", part.unseen.size()}});
    return kOk;
}

int cmd_analyze(const std::string& global_path, const std::string& local_path, const std::string& proto_path,
                double alpha, int64_t folds, uint64_t seed) {
    const auto g = read_prototypes(global_path), l = read_prototypes(local_path), p = read_prototypes(proto_path);
    if (g.vectors.rows() != l.vectors.rows() || g.class_names != l.class_names)
        throw CliError(kInvalid, "global and local embeddings list different classes");
    // Prototype rows are matched to embedding rows by class name.
    std::map<std::string, int64_t> proto_row;
    for (int64_t i = 0; i < p.vectors.rows(); ++i) proto_row[p.class_names[static_cast<size_t>(i)]] = i;
    std::vector<int64_t> rows_e, rows_p;
    for (int64_t i = 0; i < g.vectors.rows(); ++i) {
        const auto it = proto_row.find(g.class_names[static_cast<size_t>(i)]);
        if (it == proto_row.end()) continue;
        rows_e.push_back(i);
        rows_p.push_back(it->second);
    }
    if (rows_e.size() != static_cast<size_t>(p.vectors.rows()))
        throw CliError(kInvalid, "prototype classes missing from the text embeddings");
    const auto n = static_cast<Eigen::Index>(rows_e.size());
    Eigen::MatrixXd xg(n, g.vectors.cols()), xl(n, l.vectors.cols()), y(n, p.vectors.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        xg.row(i) = g.vectors.row(rows_e[static_cast<size_t>(i)]);
        xl.row(i) = l.vectors.row(rows_e[static_cast<size_t>(i)]);
        y.row(i) = p.vectors.row(rows_p[static_cast<size_t>(i)]);
    }
    Eigen::MatrixXd cat(n, xg.cols() + xl.cols());
    cat << normalize_rows(xg), normalize_rows(xl);
    const auto fold_of = fold_assignment(n, folds, seed);
    const double rg = ridge_r2(xg, y, alpha, fold_of), rl = ridge_r2(xl, y, alpha, fold_of),
                 rc = ridge_r2(cat, y, alpha, fold_of);
    std::cerr << "configuration      R^2\n"
              << "global only        " << rg << "\n"
              << "local only         " << rl << "\n"
              << "concatenated       " << rc << "\n";
    emit({{"rows", n},
          {"alpha", alpha},
          {"folds", folds},
          {"seed", seed},
          {"r2", {{"global", rg}, {"local", rl}, {"concat", rc}}}});
    return kOk;
}

int cmd_tiles(const std::string& config_path, const std::string& preset_name, const Overrides& overrides) {
    const auto cfg = resolve_config(config_path, preset_name, overrides);
    const auto plan = plan_tiles(cfg.infer);
    json origins = json::array();
    for (const auto& o : plan.origins) origins.push_back({o.row, o.col});
    emit({{"height", plan.height},
          {"width", plan.width},
          {"window", plan.window},
          {"overlap", plan.overlap},
          {"stride", plan.stride},
          {"tiles", plan.origins.size()},
          {"origins", origins}});
    return kOk;
}

int cmd_embed(const std::string& ckpt, const std::string& classes_spec, const std::string& out_prefix,
              const std::string& images_dir, const std::string& masks_dir) {
    const auto classes = parse_classes(classes_spec);
    auto loaded = open_checkpoint(ckpt, "", "", {});
    NoGradGuard ng;
    const auto texts = loaded.model->encode_text(classes);
    const auto tp = text_prototypes(texts);
    const auto C = texts.width();
    json report{{"classes", classes}};
    save_embeddings(out_prefix + "_global.ovsg", tp.vectors.leftCols(C), classes);
    save_embeddings(out_prefix + "_local.ovsg", tp.vectors.rightCols(C), classes);
    save_embeddings(out_prefix + "_text.ovsg", tp.vectors, classes);
    report["global"] = out_prefix + "_global.ovsg";
    report["local"] = out_prefix + "_local.ovsg";
    report["text"] = out_prefix + "_text.ovsg";
    if (!images_dir.empty()) {
        std::vector<FeatureMap> feats;
        std::vector<SegMap> masks;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(images_dir))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto mask_path = fs::path(masks_dir) / f.filename();
            if (!fs::exists(mask_path)) throw CliError(kInvalid, "no mask for " + f.filename().string());
            const auto img = read_png(f.string());
            const int P = loaded.model->config().encoder.patch_size;
            const auto resized = resize_image(img, img.height() / P * P, img.width() / P * P);
            feats.push_back(loaded.model->vision(resized).second);
            masks.push_back(read_label_png(mask_path.string()));
        }
        const auto protos = mask_pool_prototypes(feats, masks, static_cast<int64_t>(classes.size()), classes);
        save_embeddings(out_prefix + "_visual.ovsg", protos.vectors, protos.class_names);
        report["visual"] = out_prefix + "_visual.ovsg";
        json absent = json::array();
        for (auto a : protos.absent) absent.push_back(classes[static_cast<size_t>(a)]);
        report["absent"] = absent;
    }
    emit(report);
    return kOk;
}

int cmd_scene(uint64_t seed, int64_t n_classes, int64_t size, int patch, const std::string& out_dir) {
    const auto scene = generate_scene(seed, n_classes, size, patch);
    fs::create_directories(out_dir);
    const auto image = (fs::path(out_dir) / "image.png").string(), mask = (fs::path(out_dir) / "mask.png").string();
    write_png(image, scene.image);
    write_label_png(mask, scene.mask);
    std::ofstream(fs::path(out_dir) / "classes.txt") << [&] {
        std::string s;
        for (const auto& n : scene.class_names) s += n + "\n";
        return s;
    }();
    emit({{"image", image}, {"mask", mask}, {"classes", scene.class_names}});
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary semantic segmentation toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    std::string config_path, preset_name, out_dir, ckpt, image, classes, pred_dir, gt_dir, partition_path;
    std::string train_emb, test_emb, mode = "visual", global_emb, local_emb, proto_emb, images_dir, masks_dir;
    int ignore = 255;
    double threshold = 0.9, alpha = 1.0;
    int64_t folds = 5;
    uint64_t seed = 0;
    bool lga_on = false, lga_off = false, probs = false;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run config");
        sub->add_option("--preset", preset_name, "Base preset (desk, paper)");
        sub->allow_extras();
        sub->footer("Any config key can be overridden as --section.key value, e.g. --train.iters 50");
    };

    auto* train = app.add_subcommand("train", "Train on synthetic scenes or a data directory");
    add_config(train);
    train->add_option("--out", out_dir, "Output directory")->required();

    auto* inf = app.add_subcommand("infer", "Segment one image");
    add_config(inf);
    inf->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
    inf->add_option("--image", image, "Input PNG")->required();
    inf->add_option("--classes", classes, "Comma-separated names or a file with one name per line")->required();
    inf->add_option("--out", out_dir, "Output directory")->required();
    auto* lga_flag = inf->add_flag("--lga", lga_on, "Force local-global aggregation on");
    inf->add_flag("--no-lga", lga_off, "Force local-global aggregation off")->excludes(lga_flag);
    inf->add_flag("--probs", probs, "Also write per-class probabilities (probs.ovsg)");

    auto* ev = app.add_subcommand("eval", "mIoU of prediction PNGs against ground truth");
    ev->add_option("--pred", pred_dir, "Prediction directory")->required();
    ev->add_option("--gt", gt_dir, "Ground-truth directory")->required();
    ev->add_option("--classes", classes, "Comma-separated names or a file")->required();
    ev->add_option("--partition", partition_path, "JSON with \"seen\" and \"unseen\" class lists");
    ev->add_option("--ignore", ignore, "Ignored ground-truth label");

    auto* part = app.add_subcommand("partition", "Seen/unseen split by prototype similarity");
    part->add_option("--train", train_emb, "Training-class embeddings (.ovsg)")->required();
    part->add_option("--test", test_emb, "Test-class embeddings (.ovsg)")->required();
    part->add_option("--threshold", threshold, "Cosine threshold (strict)");
    part->add_option("--mode", mode, "visual or textual")->check(CLI::IsMember({"visual", "textual"}));

    auto* an = app.add_subcommand("analyze", "Ridge R^2 from text embeddings to visual prototypes");
    an->add_option("--global", global_emb, "Global text embeddings (.ovsg)")->required();
    an->add_option("--local", local_emb, "Local text embeddings (.ovsg)")->required();
    an->add_option("--prototypes", proto_emb, "Visual prototypes (.ovsg)")->required();
    an->add_option("--alpha", alpha, "Ridge penalty")->check(CLI::NonNegativeNumber);
    an->add_option("--folds", folds, "Cross-validation folds");
    an->add_option("--seed", seed, "Fold shuffle seed");

    auto* tiles = app.add_subcommand("tiles", "Print the tile plan for the infer section");
    add_config(tiles);

    auto* embed = app.add_subcommand("embed", "Export text embeddings and optional visual prototypes");
    embed->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
    embed->add_option("--classes", classes, "Comma-separated names or a file")->required();
    embed->add_option("--out", out_dir, "Output path prefix")->required();
    embed->add_option("--images", images_dir, "Image directory for mask pooling");
    embed->add_option("--masks", masks_dir, "Mask directory paired by file name");

    auto* scene = app.add_subcommand("scene", "Write one synthetic scene (image, mask, class list)");
    int64_t scene_classes = 4, scene_size = 384;
    int scene_patch = 16;
    scene->add_option("--seed", seed, "Scene seed");
    scene->add_option("--classes", scene_classes, "Number of classes");
    scene->add_option("--size", scene_size, "Side length in pixels");
    scene->add_option("--patch", scene_patch, "Region grid alignment");
    scene->add_option("--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalid;
    }

    try {
        if (*train) return cmd_train(config_path, preset_name, out_dir, parse_overrides(train->remaining()));
        if (*inf) {
            std::optional<bool> lga;
            if (lga_on) lga = true;
            if (lga_off) lga = false;
            return cmd_infer(ckpt, image, classes, out_dir, config_path, preset_name, lga, probs,
                             parse_overrides(inf->remaining()));
        }
        if (*ev) return cmd_eval(pred_dir, gt_dir, classes, partition_path, ignore);
        if (*part) return cmd_partition(train_emb, test_emb, threshold, mode);
        if (*an) return cmd_analyze(global_emb, local_emb, proto_emb, alpha, folds, seed);
        if (*tiles) return cmd_tiles(config_path, preset_name, parse_overrides(tiles->remaining()));
        if (*embed) {
            if (!images_dir.empty() && masks_dir.empty()) throw CliError(kInvalid, "--images needs --masks");
            return cmd_embed(ckpt, classes, out_dir, images_dir, masks_dir);
        }
        if (*scene) return cmd_scene(seed, scene_classes, scene_size, scene_patch, out_dir);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const CheckpointError& e) {
        std::cerr << "error: checkpoint mismatch: " << e.what() << "\n";
        return kMismatch;
    } catch (const ConfigError& e) {
        std::cerr << "error: invalid config: " << e.what() << "\n";
        return kInvalid;
    } catch (const ImageIoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kInvalid;
}
