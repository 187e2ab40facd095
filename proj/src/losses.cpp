#include "ovseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ovseg/errors.hpp"
#include "ovseg/ops.hpp"

namespace ovseg {

using detail::make_result;
using detail::Node;

void LossConfig::validate() const {
    if (!(lambda >= 0)) throw ConfigError("loss lambda must be >= 0");
    if (!(gamma >= 0)) throw ConfigError("loss gamma must be >= 0");
    if (!(dice_eps > 0)) throw ConfigError("dice_eps must be > 0");
}

namespace {

// (channels, pixels per channel)
std::pair<int64_t, int64_t> channel_layout(const Tensor& pred, const Tensor& target, const char* who) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(who) + ": prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    if (pred.rank() < 1 || pred.numel() == 0) throw ShapeError(std::string(who) + ": empty input");
    const int64_t channels = pred.rank() >= 3 ? pred.dim(0) : 1;
    return {channels, pred.numel() / channels};
}

}  // namespace

Tensor focal_loss(const Tensor& pred, const Tensor& target, double gamma) {
    const auto [channels, hw] = channel_layout(pred, target, "focal_loss");
    const auto p = pred.data(), y = target.data();
    const double norm = 1.0 / static_cast<double>(channels * hw);
    double total = 0.0;
    std::vector<double> deriv(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        const double a = std::pow(1.0 - q, gamma), b = std::pow(q, gamma);
        const double lq = std::log(q), lnq = std::log(1.0 - q);
        total += a * y[i] * lq + b * (1.0 - y[i]) * lnq;
        // d/dq of the bracket; gamma = 0 drops the power-rule terms.
        double d = a * y[i] / q - b * (1.0 - y[i]) / (1.0 - q);
        if (gamma != 0.0)
            d += -gamma * std::pow(1.0 - q, gamma - 1.0) * y[i] * lq + gamma * std::pow(q, gamma - 1.0) * (1.0 - y[i]) * lnq;
        deriv[i] = -d * norm;
    }
    return make_result({}, {-total * norm}, {pred}, [deriv = std::move(deriv)](Node& self) {
        auto& pp = *self.parents[0];
        if (!pp.requires_grad) return;
        auto& g = pp.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * deriv[i];
    });
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps) {
    const auto [channels, hw] = channel_layout(pred, target, "dice_loss");
    const auto p = pred.data(), y = target.data();
    std::vector<double> deriv(p.size());
    double total = 0.0;
    for (int64_t c = 0; c < channels; ++c) {
        double inter = 0.0, sy = 0.0, sp = 0.0;
        for (int64_t i = c * hw; i < (c + 1) * hw; ++i) {
            inter += y[i] * p[i];
            sy += y[i];
            sp += p[i];
        }
        const double num = 2.0 * inter + eps, den = sy + sp + eps;
        total += 1.0 - num / den;
        for (int64_t i = c * hw; i < (c + 1) * hw; ++i)
            deriv[i] = -(2.0 * y[i] * den - num) / (den * den) / static_cast<double>(channels);
    }
    return make_result({}, {total / static_cast<double>(channels)}, {pred}, [deriv = std::move(deriv)](Node& self) {
        auto& pp = *self.parents[0];
        if (!pp.requires_grad) return;
        auto& g = pp.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * deriv[i];
    });
}

LossBreakdown combined_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    cfg.validate();
    const auto f = focal_loss(pred, target, cfg.gamma);
    const auto d = dice_loss(pred, target, cfg.dice_eps);
    LossBreakdown out;
    out.focal = f.item();
    out.dice = d.item();
    out.total = cfg.lambda == 0.0 ? f : add(f, scale(d, cfg.lambda));
    return out;
}

Tensor one_hot(const std::vector<int32_t>& labels, int64_t n_classes, int64_t height, int64_t width,
               int32_t ignore_label) {
    if (static_cast<int64_t>(labels.size()) != height * width) throw ShapeError("one_hot: label count vs size");
    auto t = Tensor::zeros({n_classes, height, width});
    auto d = t.mutable_data();
    for (int64_t i = 0; i < height * width; ++i) {
        const auto l = labels[static_cast<size_t>(i)];
        if (l == ignore_label || l < 0 || l >= n_classes) continue;
        d[static_cast<size_t>(l * height * width + i)] = 1.0;
    }
    return t;
}

}  // namespace ovseg
