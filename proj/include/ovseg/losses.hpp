#pragma once

#include "ovseg/tensor.hpp"

namespace ovseg {

struct LossConfig {
    double lambda = 0.05;   // dice weight
    double gamma = 2.0;     // focal focusing parameter
    double dice_eps = 1e-6;

    void validate() const;
};

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs. The
// gradient is evaluated at the clamped point and passed straight through.
inline constexpr double kProbClamp = 1e-7;

// pred, target: [N, H, W] (or [H, W] for a single channel); target in {0, 1}.
// Per channel -(1/HW) sum[(1-p)^g y log p + p^g (1-y) log(1-p)], averaged over channels.
Tensor focal_loss(const Tensor& pred, const Tensor& target, double gamma);

// Per channel 1 - (2 sum(y p) + eps) / (sum y + sum p + eps), averaged over channels.
Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps);

struct LossBreakdown {
    Tensor total;
    double focal = 0.0;
    double dice = 0.0;
};

// focal + lambda * dice
LossBreakdown combined_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

// One-hot [N, H, W] targets from a label map; pixels labeled `ignore_label`
// (or outside [0, N)) are zero in every channel.
Tensor one_hot(const std::vector<int32_t>& labels, int64_t n_classes, int64_t height, int64_t width,
               int32_t ignore_label = 255);

}  // namespace ovseg
