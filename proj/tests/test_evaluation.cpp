#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "ovseg/errors.hpp"
#include "ovseg/evaluation.hpp"

using namespace ovseg;
using namespace testing;

namespace {

SegMap seg(int64_t h, int64_t w, std::vector<int32_t> labels) { return SegMap{h, w, std::move(labels), {}}; }

SegMap random_seg(int64_t h, int64_t w, int32_t n, Rng& rng) {
    std::vector<int32_t> l(static_cast<size_t>(h * w));
    for (auto& v : l) v = static_cast<int32_t>(rng.below(static_cast<uint64_t>(n)));
    return seg(h, w, std::move(l));
}

Eigen::MatrixXd random_matrix(int64_t r, int64_t c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

PrototypeSet protos(const Eigen::MatrixXd& v) {
    PrototypeSet p;
    p.vectors = v;
    for (int64_t i = 0; i < v.rows(); ++i) {
        p.class_ids.push_back(i);
        p.class_names.push_back("c" + std::to_string(i));
    }
    return p;
}

}  // namespace

TEST_CASE("miou: identity and the 2x2 hand case") {
    const auto t = seg(2, 2, {0, 0, 1, 1}), p = seg(2, 2, {0, 1, 1, 1});
    const auto r = miou({p}, {t}, 2);
    CHECK(*r.per_class[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(*r.per_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.mean == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
    CHECK(miou({t}, {t}, 2).mean == 1.0);
}

TEST_CASE("miou matches brute-force counting on random 3-class 16x16 pairs") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_seg(16, 16, 3, rng), t = random_seg(16, 16, 3, rng);
        const auto r = miou({p}, {t}, 3);
        double sum = 0;
        int used = 0;
        for (int32_t c = 0; c < 3; ++c) {
            int64_t inter = 0, uni = 0;
            for (size_t i = 0; i < 256; ++i) {
                inter += (p.labels[i] == c && t.labels[i] == c);
                uni += (p.labels[i] == c || t.labels[i] == c);
            }
            if (uni == 0) {
                CHECK_FALSE(r.per_class[static_cast<size_t>(c)].has_value());
                continue;
            }
            const double iou = static_cast<double>(inter) / static_cast<double>(uni);
            CHECK(*r.per_class[static_cast<size_t>(c)] == iou);
            sum += iou;
            ++used;
        }
        CHECK(r.mean == sum / used);
        // IoU is symmetric in prediction and target.
        CHECK(miou({t}, {p}, 3).mean == doctest::Approx(r.mean).epsilon(1e-15));
    }
}

TEST_CASE("confusion matrix: conservation, ignore label, merge, errors") {
    Rng rng(2);
    auto t = random_seg(8, 8, 4, rng);
    const auto p = random_seg(8, 8, 4, rng);
    t.labels[0] = 255;
    t.labels[5] = 255;
    ConfusionMatrix cm(4);
    cm.add(p, t);
    CHECK(cm.total() == 62);
    for (int32_t c = 0; c < 4; ++c) {
        int64_t row = 0, col = 0, truth = 0, pred = 0;
        for (int32_t k = 0; k < 4; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        for (size_t i = 0; i < 64; ++i) {
            if (t.labels[i] == 255) continue;
            truth += t.labels[i] == c;
            pred += p.labels[i] == c;
        }
        CHECK(row == truth);
        CHECK(col == pred);
    }
    ConfusionMatrix a(4), b(4), both(4);
    const auto p2 = random_seg(8, 8, 4, rng), t2 = random_seg(8, 8, 4, rng);
    a.add(p, t);
    b.add(p2, t2);
    both.add(p2, t2);
    both.add(p, t);
    a.merge(b);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) CHECK(a.at(i, j) == both.at(i, j));

    auto bad = t;
    bad.labels[1] = 7;
    CHECK_THROWS_AS(cm.add(p, bad), ArgumentError);
    CHECK_THROWS_AS(cm.add(random_seg(4, 4, 4, rng), t), ShapeError);
    ConfusionMatrix strict(4, std::nullopt);
    CHECK_THROWS_AS(strict.add(p, t), ArgumentError);
}

TEST_CASE("miou: undefined when nothing is scorable") {
    const auto all_ignored = seg(2, 2, {255, 255, 255, 255});
    CHECK_THROWS_AS(miou({seg(2, 2, {0, 0, 0, 0})}, {all_ignored}, 2), UndefinedMetricError);
    CHECK_THROWS_AS(miou(ConfusionMatrix(3)), UndefinedMetricError);
}

TEST_CASE("subset_miou: hand case, all-seen and recomputation") {
    ConfusionMatrix cm(2);
    cm.add(seg(2, 2, {0, 1, 1, 1}), seg(2, 2, {0, 0, 1, 1}));
    ClassPartition part;
    part.seen = {0};
    part.unseen = {1};
    const auto [s, u] = subset_miou(cm, part);
    CHECK(*s == doctest::Approx(0.5));
    CHECK(*u == doctest::Approx(2.0 / 3.0));
    ClassPartition all;
    all.seen = {0, 1};
    const auto [s2, u2] = subset_miou(cm, all);
    CHECK(*s2 == miou(cm).mean);
    CHECK_FALSE(u2.has_value());

    Rng rng(3);
    ConfusionMatrix big(6);
    for (int i = 0; i < 3; ++i) big.add(random_seg(10, 10, 6, rng), random_seg(10, 10, 6, rng));
    const auto iou = big.iou();
    ClassPartition odd;
    odd.seen = {0, 2, 4};
    odd.unseen = {1, 3, 5};
    const auto [se, un] = subset_miou(big, odd);
    CHECK(*se == doctest::Approx((*iou[0] + *iou[2] + *iou[4]) / 3.0).epsilon(1e-14));
    CHECK(*un == doctest::Approx((*iou[1] + *iou[3] + *iou[5]) / 3.0).epsilon(1e-14));
    odd.seen.push_back(9);
    CHECK_THROWS_AS(subset_miou(big, odd), ArgumentError);
}

TEST_CASE("partition_classes: identical prototype, unreachable threshold, monotone sweep") {
    Rng rng(4);
    const auto train = protos(random_matrix(6, 5, rng));
    Eigen::MatrixXd test_v = random_matrix(10, 5, rng);
    test_v.row(3) = 2.5 * train.vectors.row(1);
    const auto test = protos(test_v);
    const auto p = partition_classes(train, test, 0.999, PartitionMode::Visual);
    CHECK(std::count(p.seen.begin(), p.seen.end(), 3) == 1);
    CHECK(partition_classes(train, test, 1.0, PartitionMode::Visual).seen.empty());
    CHECK(partition_classes(train, test, 1.5, PartitionMode::Visual).unseen.size() == 10);

    std::set<int64_t> prev_seen;
    for (int64_t i = 0; i < 10; ++i) prev_seen.insert(i);
    for (double th = -0.99; th <= 1.0; th += 0.01) {
        const auto q = partition_classes(train, test, th, PartitionMode::Textual);
        CHECK(q.seen.size() + q.unseen.size() == 10);
        const std::set<int64_t> seen(q.seen.begin(), q.seen.end());
        for (auto c : q.unseen) CHECK(seen.count(c) == 0);
        // Raising the threshold never moves a class from unseen to seen.
        for (auto c : seen) CHECK(prev_seen.count(c) == 1);
        prev_seen = seen;
    }
    CHECK_THROWS_AS(partition_classes(train, protos(random_matrix(2, 4, rng)), 0.9, PartitionMode::Visual), ShapeError);
}

TEST_CASE("text_prototypes concatenate global and local embeddings") {
    TextEmbeddingSet t;
    t.class_names = {"a", "b"};
    t.global = Tensor::from({2, 2}, {1, 2, 3, 4});
    t.local = Tensor::from({2, 2}, {5, 6, 7, 8});
    const auto p = text_prototypes(t);
    REQUIRE(p.vectors.cols() == 4);
    CHECK(p.vectors(1, 0) == 3.0);
    CHECK(p.vectors(1, 3) == 8.0);
    CHECK(p.class_names == t.class_names);
}

TEST_CASE("ridge_r2: exact linear, noise, ordering") {
    Rng rng(5);
    // Orthogonal map keeps row norms, so normalization preserves Y = X W.
    const Eigen::MatrixXd w = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(12, 12, rng)).householderQ();
    const auto x = random_matrix(200, 12, rng);
    CHECK(ridge_r2(x, x * w, 1e-8, 5) >= 0.999);
    CHECK(ridge_r2(random_matrix(400, 12, rng), random_matrix(400, 8, rng), 1.0, 5) < 0.1);

    // Disjoint signal: each half of the output depends on one input block only.
    const auto xg = random_matrix(300, 8, rng), xl = random_matrix(300, 8, rng);
    Eigen::MatrixXd y(300, 16);
    y << xg * random_matrix(8, 8, rng), xl * random_matrix(8, 8, rng);
    y += 0.3 * random_matrix(300, 16, rng);
    Eigen::MatrixXd cat(300, 16);
    cat << normalize_rows(xg), normalize_rows(xl);
    const double rg = ridge_r2(xg, y, 1.0, 5), rl = ridge_r2(xl, y, 1.0, 5), rc = ridge_r2(cat, y, 1.0, 5);
    CHECK(rc > std::max(rg, rl));
}

TEST_CASE("ridge_r2: row-permutation invariance under fixed folds") {
    Rng rng(6);
    const auto x = random_matrix(60, 6, rng);
    const Eigen::MatrixXd y = x * random_matrix(6, 4, rng) + 0.5 * random_matrix(60, 4, rng);
    const auto folds = fold_assignment(60, 5, 17);
    const double base = ridge_r2(x, y, 0.5, folds);
    const auto perm = permutation(60, rng);
    Eigen::MatrixXd xp(60, 6), yp(60, 4);
    std::vector<int64_t> fp(60);
    for (int64_t i = 0; i < 60; ++i) {
        xp.row(i) = x.row(perm[static_cast<size_t>(i)]);
        yp.row(i) = y.row(perm[static_cast<size_t>(i)]);
        fp[static_cast<size_t>(i)] = folds[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    CHECK(ridge_r2(xp, yp, 0.5, fp) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("fold assignment and ridge argument errors") {
    const auto f = fold_assignment(23, 5, 3);
    std::vector<int> sizes(5, 0);
    for (auto v : f) ++sizes[static_cast<size_t>(v)];
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    CHECK(fold_assignment(23, 5, 3) == f);
    Rng rng(7);
    CHECK_THROWS_AS(ridge_r2(random_matrix(4, 3, rng), random_matrix(4, 2, rng), 1.0, 5), ArgumentError);
    CHECK_THROWS_AS(ridge_r2(random_matrix(10, 3, rng), random_matrix(9, 2, rng), 1.0, 5), ShapeError);
    // More columns than training rows: singular without regularization.
    Eigen::MatrixXd wide = random_matrix(10, 20, rng);
    CHECK_THROWS_AS(ridge_r2(wide, random_matrix(10, 2, rng), 0.0, 5), NumericError);
    CHECK_NOTHROW(ridge_r2(wide, random_matrix(10, 2, rng), 1.0, 5));
}

TEST_CASE("mask_pool_prototypes: constant, hand average, absent classes, merge") {
    const auto f0 = make_feature_map(Tensor::full({3, 2, 2}, 0.4));
    const auto one = mask_pool_prototypes({f0}, {seg(2, 2, {0, 0, 0, 0})}, 1);
    REQUIRE(one.vectors.rows() == 1);
    for (int64_t c = 0; c < 3; ++c) CHECK(one.vectors(0, c) == doctest::Approx(0.4));

    // Two cells of class 1 with vectors a and b; the mask is at 2x the feature resolution.
    const auto f = make_feature_map(Tensor::from({2, 1, 2}, {1.0, 3.0, 2.0, -4.0}));
    const auto m = seg(2, 4, {1, 1, 1, 1, 1, 1, 1, 1});
    const auto p = mask_pool_prototypes({f}, {m}, 3, {"x", "y", "z"});
    REQUIRE(p.vectors.rows() == 1);
    CHECK(p.class_ids == std::vector<int64_t>{1});
    CHECK(p.class_names == std::vector<std::string>{"y"});
    CHECK(p.vectors(0, 0) == doctest::Approx(2.0));
    CHECK(p.vectors(0, 1) == doctest::Approx(-1.0));
    CHECK(p.absent == std::vector<int64_t>{0, 2});

    Rng rng(8);
    std::vector<FeatureMap> fa, fb;
    std::vector<SegMap> ma, mb;
    for (int i = 0; i < 3; ++i) {
        fa.push_back(make_feature_map(random_tensor({4, 4, 4}, rng)));
        ma.push_back(random_seg(8, 8, 3, rng));
        fb.push_back(make_feature_map(random_tensor({4, 4, 4}, rng)));
        mb.push_back(random_seg(8, 8, 3, rng));
    }
    auto fab = fa;
    auto mab = ma;
    fab.insert(fab.end(), fb.begin(), fb.end());
    mab.insert(mab.end(), mb.begin(), mb.end());
    const auto pa = mask_pool_prototypes(fa, ma, 3), pb = mask_pool_prototypes(fb, mb, 3),
               pab = mask_pool_prototypes(fab, mab, 3);
    REQUIRE(pa.vectors.rows() == 3);
    REQUIRE(pb.vectors.rows() == 3);
    for (int64_t c = 0; c < 3; ++c) {
        const double na = static_cast<double>(pa.counts[static_cast<size_t>(c)]),
                     nb = static_cast<double>(pb.counts[static_cast<size_t>(c)]);
        const Eigen::VectorXd merged = (na * pa.vectors.row(c) + nb * pb.vectors.row(c)) / (na + nb);
        CHECK((merged.transpose() - pab.vectors.row(c)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(pab.counts[static_cast<size_t>(c)] == pa.counts[static_cast<size_t>(c)] + pb.counts[static_cast<size_t>(c)]);
    }
}
