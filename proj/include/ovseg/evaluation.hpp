#pragma once

// Segmentation metrics and embedding analysis: confusion-matrix mIoU,
// seen/unseen class partitioning and ridge-regression R^2.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/types.hpp"

namespace ovseg {

// rows = ground truth, cols = prediction
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int64_t n_classes, std::optional<int32_t> ignore_label = 255);

    // Accumulates one prediction/target pair. Target pixels equal to the
    // ignore label are skipped; any other out-of-range label is an error.
    void add(const SegMap& prediction, const SegMap& target);
    void merge(const ConfusionMatrix& other);

    int64_t n_classes() const { return n_; }
    std::optional<int32_t> ignore_label() const { return ignore_; }
    int64_t at(int64_t truth, int64_t pred) const { return counts_[static_cast<size_t>(truth * n_ + pred)]; }
    int64_t total() const;

    // IoU per class; nullopt where the class has zero union.
    std::vector<std::optional<double>> iou() const;

private:
    int64_t n_;
    std::optional<int32_t> ignore_;
    std::vector<int64_t> counts_;
};

struct MiouReport {
    std::vector<std::optional<double>> per_class;
    double mean = 0.0;
};

// Mean over classes with nonzero union; throws UndefinedMetricError if none.
MiouReport miou(const ConfusionMatrix& cm);
MiouReport miou(const std::vector<SegMap>& predictions, const std::vector<SegMap>& targets, int64_t n_classes,
                std::optional<int32_t> ignore_label = 255);

enum class PartitionMode { Visual, Textual };

struct ClassPartition {
    std::vector<int64_t> seen;
    std::vector<int64_t> unseen;
    double threshold = 0.9;
    PartitionMode mode = PartitionMode::Visual;
};

// One vector per present class. `class_ids` index into the original class
// list; classes without any labeled cell are listed in `absent`.
struct PrototypeSet {
    std::vector<std::string> class_names;
    std::vector<int64_t> class_ids;
    Eigen::MatrixXd vectors;      // [present, C]
    std::vector<int64_t> counts;  // cells pooled per present class
    std::vector<int64_t> absent;
};

// Mean feature per class over every cell labeled with it. Masks are brought
// to the feature grid by nearest-neighbour sampling at cell centers.
PrototypeSet mask_pool_prototypes(const std::vector<FeatureMap>& features, const std::vector<SegMap>& masks,
                                  int64_t n_classes, const std::vector<std::string>& class_names = {},
                                  std::optional<int32_t> ignore_label = 255);

// Concatenated (global | local) text embeddings as class representations.
PrototypeSet text_prototypes(const TextEmbeddingSet& texts);

// A test class is seen iff its highest cosine similarity to any train class
// is strictly greater than `threshold`.
ClassPartition partition_classes(const PrototypeSet& train, const PrototypeSet& test, double threshold,
                                 PartitionMode mode);

// Mean IoU over each subset (zero-union classes skipped); nullopt when a
// subset has no scorable class.
std::pair<std::optional<double>, std::optional<double>> subset_miou(const ConfusionMatrix& cm,
                                                                    const ClassPartition& partition);

// Fold index per row: seeded shuffle, then contiguous blocks.
std::vector<int64_t> fold_assignment(int64_t rows, int64_t folds, uint64_t seed);

// Rows of X and Y are L2-normalized; k-fold closed-form ridge without
// intercept; R^2 pooled over held-out rows, averaged uniformly over outputs.
double ridge_r2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double alpha, int64_t folds, uint64_t seed = 0);
double ridge_r2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double alpha, const std::vector<int64_t>& fold_of);

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

}  // namespace ovseg
