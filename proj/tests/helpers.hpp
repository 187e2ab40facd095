#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "ovseg/model.hpp"
#include "ovseg/ops.hpp"
#include "ovseg/rng.hpp"

namespace testing {

using namespace ovseg;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline ImageTensor random_image(int64_t h, int64_t w, Rng& rng) { return make_image(random_tensor({3, h, w}, rng, 0.0, 1.0)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    const auto x = a.data(), y = b.data();
    if (x.size() != y.size()) return INFINITY;
    double m = 0.0;
    for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Weighted sum with fixed random weights: a scalar probe of a tensor-valued function.
inline Tensor probe(const Tensor& y, uint64_t seed = 99) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

struct GradCheck {
    double rel_error = 0.0;  // ||analytic - numeric|| / (||analytic|| + ||numeric||)
    double max_abs = 0.0;
};

// Central differences (step h) against reverse mode for every input element.
inline GradCheck gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                           double h = 1e-6) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    f(inputs).backward();
    std::vector<double> analytic, numeric;
    for (auto& t : inputs) {
        const auto g = t.grad();
        for (int64_t i = 0; i < t.numel(); ++i) analytic.push_back(g.empty() ? 0.0 : g[static_cast<size_t>(i)]);
    }
    {
        NoGradGuard ng;
        for (auto& t : inputs) {
            auto d = t.mutable_data();
            for (size_t i = 0; i < d.size(); ++i) {
                const double orig = d[i];
                d[i] = orig + h;
                const double up = f(inputs).item();
                d[i] = orig - h;
                const double down = f(inputs).item();
                d[i] = orig;
                numeric.push_back((up - down) / (2.0 * h));
            }
        }
    }
    double diff = 0.0, na = 0.0, nn = 0.0, mx = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
        mx = std::max(mx, std::abs(analytic[i] - numeric[i]));
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    return {denom > 0 ? std::sqrt(diff) / denom : 0.0, mx};
}

// Small architecture for fast tests.
inline ModelConfig tiny_model_config(uint64_t seed = 3) {
    ModelConfig c;
    c.encoder.patch_size = 8;
    c.encoder.vision_dim = 16;
    c.encoder.vision_heads = 2;
    c.encoder.spe_dim = 16;
    c.encoder.spe_heads = 2;
    c.encoder.text_hash_dim = 64;
    c.encoder.text_hidden = 32;
    c.refiner_conv_dim = 8;
    c.refiner_qk_dim = 8;
    c.refiner_heads = 2;
    c.corr_dim = 8;
    c.spatial_window = 2;
    c.spatial_heads = 2;
    c.class_heads = 2;
    c.decoder_width1 = 8;
    c.decoder_width2 = 4;
    c.seed = seed;
    return c;
}

inline std::vector<int64_t> permutation(int64_t n, Rng& rng) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) std::swap(p[static_cast<size_t>(i)], p[rng.below(static_cast<uint64_t>(i + 1))]);
    return p;
}

// Reorders axis 0: out[i] = x[perm[i]].
inline Tensor permute_rows(const Tensor& x, const std::vector<int64_t>& perm) {
    std::vector<Tensor> rows;
    for (const auto p : perm) rows.push_back(narrow(x, 0, p, 1));
    return concat(rows, 0);
}

}  // namespace testing
