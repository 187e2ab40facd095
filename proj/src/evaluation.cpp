#include "ovseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ovseg/errors.hpp"
#include "ovseg/rng.hpp"

namespace ovseg {

ConfusionMatrix::ConfusionMatrix(int64_t n_classes, std::optional<int32_t> ignore_label)
    : n_(n_classes), ignore_(ignore_label) {
    if (n_classes < 1) throw ArgumentError("confusion matrix needs at least one class");
    counts_.assign(static_cast<size_t>(n_ * n_), 0);
}

void ConfusionMatrix::add(const SegMap& prediction, const SegMap& target) {
    if (prediction.height != target.height || prediction.width != target.width)
        throw ShapeError("confusion: prediction " + std::to_string(prediction.height) + "x" +
                         std::to_string(prediction.width) + " vs target " + std::to_string(target.height) + "x" +
                         std::to_string(target.width));
    const auto n = static_cast<size_t>(target.height * target.width);
    if (prediction.labels.size() != n || target.labels.size() != n) throw ShapeError("confusion: label buffer size");
    for (size_t i = 0; i < n; ++i) {
        const auto t = target.labels[i];
        if (ignore_ && t == *ignore_) continue;
        const auto p = prediction.labels[i];
        if (t < 0 || t >= n_) throw ArgumentError("confusion: target label " + std::to_string(t) + " out of range");
        if (p < 0 || p >= n_) throw ArgumentError("confusion: predicted label " + std::to_string(p) + " out of range");
        ++counts_[static_cast<size_t>(t * n_ + p)];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ShapeError("confusion: class counts differ");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), int64_t{0}); }

std::vector<std::optional<double>> ConfusionMatrix::iou() const {
    std::vector<std::optional<double>> out(static_cast<size_t>(n_));
    for (int64_t c = 0; c < n_; ++c) {
        int64_t row = 0, col = 0;
        for (int64_t k = 0; k < n_; ++k) {
            row += at(c, k);
            col += at(k, c);
        }
        const int64_t tp = at(c, c);
        const int64_t uni = row + col - tp;
        if (uni > 0) out[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    }
    return out;
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& iou, const std::vector<int64_t>& ids) {
    double s = 0.0;
    int64_t n = 0;
    for (const auto c : ids)
        if (iou[static_cast<size_t>(c)]) {
            s += *iou[static_cast<size_t>(c)];
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

}  // namespace

MiouReport miou(const ConfusionMatrix& cm) {
    MiouReport r;
    r.per_class = cm.iou();
    std::vector<int64_t> all(static_cast<size_t>(cm.n_classes()));
    std::iota(all.begin(), all.end(), 0);
    const auto m = mean_of(r.per_class, all);
    if (!m) throw UndefinedMetricError("mIoU undefined: no class appears in prediction or target");
    r.mean = *m;
    return r;
}

MiouReport miou(const std::vector<SegMap>& predictions, const std::vector<SegMap>& targets, int64_t n_classes,
                std::optional<int32_t> ignore_label) {
    if (predictions.size() != targets.size())
        throw ShapeError("miou: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    ConfusionMatrix cm(n_classes, ignore_label);
    for (size_t i = 0; i < predictions.size(); ++i) cm.add(predictions[i], targets[i]);
    return miou(cm);
}

PrototypeSet mask_pool_prototypes(const std::vector<FeatureMap>& features, const std::vector<SegMap>& masks,
                                  int64_t n_classes, const std::vector<std::string>& class_names,
                                  std::optional<int32_t> ignore_label) {
    if (features.size() != masks.size()) throw ShapeError("mask_pool: feature/mask count mismatch");
    if (!class_names.empty() && static_cast<int64_t>(class_names.size()) != n_classes)
        throw ShapeError("mask_pool: class name count differs from n_classes");
    const int64_t C = features.empty() ? 0 : features.front().channels();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_classes, C);
    std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
    for (size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const auto& m = masks[i];
        if (f.channels() != C) throw ShapeError("mask_pool: feature widths differ");
        const int64_t h = f.height(), w = f.width();
        const auto v = f.data.data();
        for (int64_t y = 0; y < h; ++y) {
            const int64_t sy = std::min(m.height - 1, (2 * y + 1) * m.height / (2 * h));
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sx = std::min(m.width - 1, (2 * x + 1) * m.width / (2 * w));
                const auto label = m.at(sy, sx);
                if ((ignore_label && label == *ignore_label) || label < 0 || label >= n_classes) continue;
                for (int64_t c = 0; c < C; ++c) sums(label, c) += v[static_cast<size_t>((c * h + y) * w + x)];
                ++counts[static_cast<size_t>(label)];
            }
        }
    }
    PrototypeSet out;
    std::vector<int64_t> present;
    for (int64_t c = 0; c < n_classes; ++c) (counts[static_cast<size_t>(c)] > 0 ? present : out.absent).push_back(c);
    out.vectors.resize(static_cast<Eigen::Index>(present.size()), C);
    for (size_t k = 0; k < present.size(); ++k) {
        const auto c = present[k];
        out.class_ids.push_back(c);
        out.counts.push_back(counts[static_cast<size_t>(c)]);
        out.class_names.push_back(class_names.empty() ? std::to_string(c) : class_names[static_cast<size_t>(c)]);
        out.vectors.row(static_cast<Eigen::Index>(k)) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
    }
    return out;
}

PrototypeSet text_prototypes(const TextEmbeddingSet& texts) {
    const int64_t N = texts.size(), C = texts.width();
    PrototypeSet out;
    out.class_names = texts.class_names;
    out.vectors.resize(N, 2 * C);
    const auto g = texts.global.data(), l = texts.local.data();
    for (int64_t i = 0; i < N; ++i) {
        out.class_ids.push_back(i);
        out.counts.push_back(1);
        for (int64_t c = 0; c < C; ++c) {
            out.vectors(i, c) = g[static_cast<size_t>(i * C + c)];
            out.vectors(i, C + c) = l[static_cast<size_t>(i * C + c)];
        }
    }
    return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n < 1e-12)
            out.row(i).setZero();
        else
            out.row(i) /= n;
    }
    return out;
}

ClassPartition partition_classes(const PrototypeSet& train, const PrototypeSet& test, double threshold,
                                 PartitionMode mode) {
    if (train.vectors.cols() != test.vectors.cols())
        throw ShapeError("partition: train width " + std::to_string(train.vectors.cols()) + " vs test width " +
                         std::to_string(test.vectors.cols()));
    ClassPartition out;
    out.threshold = threshold;
    out.mode = mode;
    const Eigen::MatrixXd sim = normalize_rows(test.vectors) * normalize_rows(train.vectors).transpose();
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        const double best = sim.cols() > 0 ? sim.row(i).maxCoeff() : -2.0;
        const auto id = i < static_cast<Eigen::Index>(test.class_ids.size()) ? test.class_ids[static_cast<size_t>(i)] : i;
        (best > threshold ? out.seen : out.unseen).push_back(id);
    }
    return out;
}

std::pair<std::optional<double>, std::optional<double>> subset_miou(const ConfusionMatrix& cm,
                                                                    const ClassPartition& partition) {
    for (const auto* ids : {&partition.seen, &partition.unseen})
        for (const auto c : *ids)
            if (c < 0 || c >= cm.n_classes())
                throw ArgumentError("subset_miou: class index " + std::to_string(c) + " out of range");
    const auto iou = cm.iou();
    return {mean_of(iou, partition.seen), mean_of(iou, partition.unseen)};
}

std::vector<int64_t> fold_assignment(int64_t rows, int64_t folds, uint64_t seed) {
    if (folds < 2) throw ArgumentError("ridge: folds must be >= 2");
    if (rows < folds)
        throw ArgumentError("ridge: " + std::to_string(rows) + " rows is fewer than " + std::to_string(folds) + " folds");
    std::vector<int64_t> order(static_cast<size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (int64_t i = rows - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
    std::vector<int64_t> fold_of(static_cast<size_t>(rows));
    for (int64_t f = 0; f < folds; ++f)
        for (int64_t k = f * rows / folds; k < (f + 1) * rows / folds; ++k) fold_of[static_cast<size_t>(order[static_cast<size_t>(k)])] = f;
    return fold_of;
}

double ridge_r2(const Eigen::MatrixXd& x_in, const Eigen::MatrixXd& y_in, double alpha, int64_t folds, uint64_t seed) {
    if (x_in.rows() != y_in.rows())
        throw ShapeError("ridge: " + std::to_string(x_in.rows()) + " input rows vs " + std::to_string(y_in.rows()) +
                         " target rows");
    return ridge_r2(x_in, y_in, alpha, fold_assignment(x_in.rows(), folds, seed));
}

double ridge_r2(const Eigen::MatrixXd& x_in, const Eigen::MatrixXd& y_in, double alpha,
                const std::vector<int64_t>& fold_of) {
    if (x_in.rows() != y_in.rows() || static_cast<Eigen::Index>(fold_of.size()) != x_in.rows())
        throw ShapeError("ridge: row counts disagree");
    if (alpha < 0) throw ArgumentError("ridge: alpha must be >= 0");
    const Eigen::MatrixXd x = normalize_rows(x_in), y = normalize_rows(y_in);
    const int64_t folds = fold_of.empty() ? 0 : *std::max_element(fold_of.begin(), fold_of.end()) + 1;
    if (folds < 2) throw ArgumentError("ridge: folds must be >= 2");
    Eigen::MatrixXd pred(y.rows(), y.cols());
    for (int64_t f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> tr, te;
        for (Eigen::Index i = 0; i < x.rows(); ++i) (fold_of[static_cast<size_t>(i)] == f ? te : tr).push_back(i);
        if (te.empty()) throw ArgumentError("ridge: fold " + std::to_string(f) + " is empty");
        const Eigen::MatrixXd xt = x(tr, Eigen::all), yt = y(tr, Eigen::all);
        Eigen::MatrixXd gram = xt.transpose() * xt;
        gram.diagonal().array() += alpha;
        const Eigen::MatrixXd rhs = xt.transpose() * yt;
        Eigen::MatrixXd w;
        if (alpha == 0.0) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
            if (qr.rank() < gram.cols())
                throw NumericError("ridge: singular normal equations with alpha = 0 (fold " + std::to_string(f) + ")");
            w = qr.solve(rhs);
        } else {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
            if (ldlt.info() != Eigen::Success) throw NumericError("ridge: factorization failed");
            w = ldlt.solve(rhs);
        }
        pred(te, Eigen::all) = x(te, Eigen::all) * w;
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
        const double mu = y.col(j).mean();
        const double ss_tot = (y.col(j).array() - mu).square().sum();
        const double ss_res = (y.col(j) - pred.col(j)).squaredNorm();
        // Constant column: perfect if reproduced exactly, otherwise zero.
        if (ss_tot == 0.0)
            total += ss_res == 0.0 ? 1.0 : 0.0;
        else
            total += 1.0 - ss_res / ss_tot;
    }
    return y.cols() > 0 ? total / static_cast<double>(y.cols()) : 0.0;
}

}  // namespace ovseg
