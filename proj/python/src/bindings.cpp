#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ovseg/checkpoint.hpp"
#include "ovseg/config.hpp"
#include "ovseg/evaluation.hpp"
#include "ovseg/lga.hpp"
#include "ovseg/losses.hpp"
#include "ovseg/training.hpp"

namespace py = pybind11;
using namespace ovseg;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32 = py::array_t<int32_t, py::array::c_style | py::array::forcecast>;

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Overrides to_overrides(const py::dict& d) {
    Overrides out;
    for (const auto& [k, v] : d) {
        auto key = py::str(k).cast<std::string>();
        if (py::isinstance<py::bool_>(v))
            out.emplace_back(key, v.cast<bool>() ? "true" : "false");
        else
            out.emplace_back(key, py::str(v).cast<std::string>());
    }
    return out;
}

Tensor tensor_from(const F64& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(const Tensor& t) {
    const auto d = t.data();
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(d.begin(), d.end(), out.mutable_data());
    return out;
}

// [H, W, 3] array in [0, 1] (float) or [0, 255] (uint8) -> [3, H, W] image.
ImageTensor image_from(const py::array& arr) {
    const bool bytes = arr.dtype().is(py::dtype::of<uint8_t>());
    const F64 a = F64::ensure(arr);
    if (!a || a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image must be an [H, W, 3] array");
    const int64_t H = a.shape(0), W = a.shape(1);
    const double s = bytes ? 1.0 / 255.0 : 1.0;
    std::vector<double> v(static_cast<size_t>(3 * H * W));
    const double* p = a.data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) v[static_cast<size_t>((c * H + y) * W + x)] = p[(y * W + x) * 3 + c] * s;
    return make_image(Tensor::from({3, H, W}, std::move(v)));
}

py::array_t<double> image_to_numpy(const ImageTensor& img) {
    const int64_t H = img.height(), W = img.width();
    py::array_t<double> out({H, W, int64_t{3}});
    double* o = out.mutable_data();
    const auto d = img.data.data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) o[(y * W + x) * 3 + c] = d[static_cast<size_t>((c * H + y) * W + x)];
    return out;
}

SegMap segmap_from(const I32& a) {
    if (a.ndim() != 2) throw ShapeError("label map must be a 2-D array");
    SegMap m;
    m.height = a.shape(0);
    m.width = a.shape(1);
    m.labels.assign(a.data(), a.data() + a.size());
    return m;
}

py::array_t<int32_t> segmap_to_numpy(const SegMap& m) {
    py::array_t<int32_t> out({m.height, m.width});
    std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
    return out;
}

py::object optional_list(const std::vector<std::optional<double>>& v) {
    py::list out;
    for (const auto& x : v) out.append(x ? py::object(py::float_(*x)) : py::object(py::none()));
    return std::move(out);
}

class PyModel {
public:
    PyModel(const std::string& preset_name, const py::dict& overrides)
        : cfg_(default_config(preset_name, to_overrides(overrides))),
          model_(std::make_unique<SegmentationModel>(cfg_.model_config())) {}

    PyModel(RunConfig cfg, std::unique_ptr<SegmentationModel> model) : cfg_(std::move(cfg)), model_(std::move(model)) {}

    static PyModel load(const std::string& dir) {
        auto ck = load_checkpoint(dir);
        return PyModel(std::move(ck.config), std::move(ck.model));
    }

    py::object config() const { return json_to_py(to_json(cfg_)); }

    void save(const std::string& dir) const { save_checkpoint(dir, *model_, cfg_); }

    py::tuple encode_text(const std::vector<std::string>& names) const {
        NoGradGuard ng;
        const auto t = model_->encode_text(names);
        return py::make_tuple(to_numpy(t.global), to_numpy(t.local));
    }

    py::tuple infer(const py::array& image, const std::vector<std::string>& names, std::optional<bool> lga) const {
        auto lcfg = cfg_.infer;
        if (lga) lcfg.lga_vlm = *lga;
        const auto r = infer_logits(image_from(image), *model_, names, lcfg);
        return py::make_tuple(segmap_to_numpy(r.segmap), to_numpy(r.logits.data));
    }

    int64_t num_params() const {
        const auto [b, h] = check_param_groups(model_->params());
        return b + h;
    }

private:
    RunConfig cfg_;
    std::unique_ptr<SegmentationModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Open-vocabulary semantic segmentation core";

    m.def("preset_names", &preset_names);
    m.def(
        "default_config",
        [](const std::string& name, const py::dict& overrides) {
            return json_to_py(to_json(default_config(name, to_overrides(overrides))));
        },
        py::arg("preset") = "desk", py::arg("overrides") = py::dict());

    m.def(
        "plan_tiles",
        [](int64_t height, int64_t width, int64_t window, int64_t overlap) {
            std::vector<std::pair<int64_t, int64_t>> out;
            for (const auto& o : plan_tiles(height, width, window, overlap).origins) out.emplace_back(o.row, o.col);
            return out;
        },
        py::arg("height"), py::arg("width"), py::arg("window"), py::arg("overlap"),
        "Tile origins (row, col) in row-major order.");

    m.def(
        "focal_loss", [](const F64& p, const F64& y, double gamma) {
            return focal_loss(tensor_from(p), tensor_from(y), gamma).item();
        },
        py::arg("pred"), py::arg("target"), py::arg("gamma") = 2.0);
    m.def(
        "dice_loss", [](const F64& p, const F64& y, double eps) {
            return dice_loss(tensor_from(p), tensor_from(y), eps).item();
        },
        py::arg("pred"), py::arg("target"), py::arg("eps") = 1e-6);

    m.def(
        "miou",
        [](const std::vector<I32>& preds, const std::vector<I32>& targets, int64_t n_classes,
           std::optional<int32_t> ignore_label) {
            std::vector<SegMap> p, t;
            for (const auto& a : preds) p.push_back(segmap_from(a));
            for (const auto& a : targets) t.push_back(segmap_from(a));
            const auto r = miou(p, t, n_classes, ignore_label);
            return py::make_tuple(r.mean, optional_list(r.per_class));
        },
        py::arg("predictions"), py::arg("targets"), py::arg("n_classes"), py::arg("ignore_label") = 255,
        "Returns (mean IoU, per-class IoU with None for zero-union classes).");

    m.def(
        "ridge_r2",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double alpha, int64_t folds, uint64_t seed) {
            return ridge_r2(x, y, alpha, folds, seed);
        },
        py::arg("x"), py::arg("y"), py::arg("alpha") = 1.0, py::arg("folds") = 5, py::arg("seed") = 0);

    m.def(
        "partition_classes",
        [](const Eigen::MatrixXd& train, const Eigen::MatrixXd& test, double threshold) {
            PrototypeSet a, b;
            a.vectors = train;
            b.vectors = test;
            for (int64_t i = 0; i < train.rows(); ++i) a.class_ids.push_back(i);
            for (int64_t i = 0; i < test.rows(); ++i) b.class_ids.push_back(i);
            const auto p = partition_classes(a, b, threshold, PartitionMode::Visual);
            return py::make_tuple(p.seen, p.unseen);
        },
        py::arg("train"), py::arg("test"), py::arg("threshold") = 0.9,
        "Splits test rows into (seen, unseen) by max cosine similarity to train rows.");

    m.def(
        "generate_scene",
        [](uint64_t seed, int64_t n_classes, int64_t size, int patch) {
            const auto s = generate_scene(seed, n_classes, size, patch);
            return py::make_tuple(image_to_numpy(s.image), segmap_to_numpy(s.mask), s.class_names);
        },
        py::arg("seed"), py::arg("n_classes") = 4, py::arg("size") = 128, py::arg("patch") = 16,
        "Returns (image [H, W, 3] in [0, 1], labels [H, W], class names).");

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&, const py::dict&>(), py::arg("preset") = "desk",
             py::arg("overrides") = py::dict())
        .def_static("load", &PyModel::load, py::arg("checkpoint_dir"))
        .def("save", &PyModel::save, py::arg("checkpoint_dir"))
        .def_property_readonly("config", &PyModel::config)
        .def_property_readonly("num_params", &PyModel::num_params)
        .def("encode_text", &PyModel::encode_text, py::arg("class_names"),
             "Returns (global, local) embeddings, each [N, C].")
        .def("infer", &PyModel::infer, py::arg("image"), py::arg("class_names"), py::arg("lga") = py::none(),
             "Returns (labels [H, W], logits [N, H, W]) at the configured resize.");
}
