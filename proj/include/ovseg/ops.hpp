#pragma once

// Differentiable tensor operations. Every op records its backward pass when
// gradient recording is enabled; see tensor.hpp.

#include <memory>
#include <optional>
#include <vector>

#include "ovseg/tensor.hpp"

namespace ovseg {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int64_t axis);
Tensor mean_axis(const Tensor& x, int64_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& dims);
// out[i] = index[i] < 0 ? 0 : x.flat[index[i]]; the adjoint scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index, Shape out_shape);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length);

// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] (same batch dims as a).
// With trans_b, b is given as [.., N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);
// x: [..., in]; weight: [out, in]; bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: [B, Cin, H, W]; weight: [Cout, Cin, k, k]; bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Bilinear resampling of the last two axes, half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);

// Unit-normalizes the last axis; vectors with norm below `eps` map to zero.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Rotary encoding of the last axis of x: [..., T, D] at per-token integer
// grid positions. Channel pairs (2p, 2p+1) with p < ceil(D/4) rotate with the
// row index, the remaining pairs with the column index.
Tensor rope2d(const Tensor& x, const std::vector<int64_t>& rows, const std::vector<int64_t>& cols,
              double base = 10000.0);

// Position-free helpers shared by layout code.
std::vector<int64_t> contiguous_strides(const Shape& shape);
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace ovseg
