#include "ovseg/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "ovseg/errors.hpp"

namespace ovseg {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Node& parent(Node& n, size_t i) { return *n.parents[i]; }

// Applies `f(x) -> (y, dy/dx)` elementwise.
template <class F>
Tensor unary(const Tensor& x, F f) {
    const auto in = x.data();
    std::vector<double> out(in.size()), deriv(in.size());
    for (size_t i = 0; i < in.size(); ++i) {
        auto [y, d] = f(in[i]);
        out[i] = y;
        deriv[i] = d;
    }
    return make_result(x.shape(), std::move(out), {x}, [deriv = std::move(deriv)](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv[i];
    });
}

// Flat offsets into a and b for every element of the broadcast output.
struct BroadcastPlan {
    Shape out;
    std::vector<int64_t> off_a, off_b;
};

BroadcastPlan plan_broadcast(const Shape& sa, const Shape& sb) {
    BroadcastPlan plan;
    plan.out = broadcast_shapes(sa, sb);
    const auto r = plan.out.size();
    auto aligned_strides = [&](const Shape& s) {
        std::vector<int64_t> st(r, 0);
        const auto cs = contiguous_strides(s);
        const auto shift = r - s.size();
        for (size_t i = 0; i < s.size(); ++i) st[i + shift] = s[i] == 1 ? 0 : cs[i];
        return st;
    };
    const auto st_a = aligned_strides(sa), st_b = aligned_strides(sb);
    const auto n = numel(plan.out);
    plan.off_a.resize(static_cast<size_t>(n));
    plan.off_b.resize(static_cast<size_t>(n));
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        plan.off_a[static_cast<size_t>(i)] = oa;
        plan.off_b[static_cast<size_t>(i)] = ob;
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += st_a[d];
            ob += st_b[d];
            if (idx[d] < plan.out[d]) break;
            oa -= st_a[d] * idx[d];
            ob -= st_b[d] * idx[d];
            idx[d] = 0;
        }
    }
    return plan;
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
    const auto va = a.data(), vb = b.data();
    auto apply = [op](double x, double y) {
        switch (op) {
            case BinOp::Add: return x + y;
            case BinOp::Sub: return x - y;
            case BinOp::Mul: return x * y;
            case BinOp::Div: return x / y;
        }
        return 0.0;
    };
    // d(out)/da and d(out)/db given operand values.
    auto partials = [op](double x, double y) -> std::pair<double, double> {
        switch (op) {
            case BinOp::Add: return {1.0, 1.0};
            case BinOp::Sub: return {1.0, -1.0};
            case BinOp::Mul: return {y, x};
            case BinOp::Div: return {1.0 / y, -x / (y * y)};
        }
        return {0.0, 0.0};
    };

    if (a.shape() == b.shape()) {
        std::vector<double> out(va.size());
        for (size_t i = 0; i < va.size(); ++i) out[i] = apply(va[i], vb[i]);
        return make_result(a.shape(), std::move(out), {a, b}, [partials](Node& self) {
            auto& pa = parent(self, 0);
            auto& pb = parent(self, 1);
            for (size_t i = 0; i < self.grad.size(); ++i) {
                auto [da, db] = partials(pa.value[i], pb.value[i]);
                if (pa.requires_grad) pa.ensure_grad()[i] += self.grad[i] * da;
                if (pb.requires_grad) pb.ensure_grad()[i] += self.grad[i] * db;
            }
        });
    }

    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
    std::vector<double> out(plan->off_a.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = apply(va[static_cast<size_t>(plan->off_a[i])], vb[static_cast<size_t>(plan->off_b[i])]);
    auto shape = plan->out;
    return make_result(std::move(shape), std::move(out), {a, b}, [plan, partials](Node& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const auto ia = static_cast<size_t>(plan->off_a[i]);
            const auto ib = static_cast<size_t>(plan->off_b[i]);
            auto [da, db] = partials(pa.value[ia], pb.value[ib]);
            if (pa.requires_grad) pa.ensure_grad()[ia] += self.grad[i] * da;
            if (pb.requires_grad) pb.ensure_grad()[ib] += self.grad[i] * db;
        }
    });
}

int64_t norm_axis(int64_t axis, int64_t rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

}  // namespace

std::vector<int64_t> contiguous_strides(const Shape& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const auto r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }

Tensor scale(const Tensor& x, double s) {
    return unary(x, [s](double v) { return std::pair{v * s, s}; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary(x, [s](double v) { return std::pair{v + s, 1.0}; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) {
        const double e = std::exp(v);
        return std::pair{e, e};
    });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, [](double v) {
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::pair{s, s * (1.0 - s)};
    });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) {
        const double t = std::tanh(v);
        return std::pair{t, 1.0 - t * t};
    });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0}; });
}

Tensor gelu(const Tensor& x) {
    return unary(x, [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return std::pair{v * cdf, cdf + v * pdf};
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int64_t axis) {
    axis = norm_axis(axis, x.rank());
    const auto& s = x.shape();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[i];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];
    const int64_t len = s[axis];
    Shape out_shape;
    for (int64_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
    const auto in = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t l = 0; l < len; ++l)
            for (int64_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * len + l) * inner + i];
    return make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, len](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t l = 0; l < len; ++l)
                for (int64_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
    });
}

Tensor mean_axis(const Tensor& x, int64_t axis) {
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor reshape(const Tensor& x, Shape shape) {
    int64_t infer = -1, known = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one inferred axis");
            infer = static_cast<int64_t>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0 && known > 0) shape[static_cast<size_t>(infer)] = x.numel() / known;
    if (numel(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index, Shape out_shape) {
    if (static_cast<int64_t>(index->size()) != numel(out_shape))
        throw ShapeError("gather index size does not match " + shape_str(out_shape));
    const auto in = x.data();
    std::vector<double> out(index->size());
    for (size_t i = 0; i < out.size(); ++i) {
        const auto j = (*index)[i];
        out[i] = j < 0 ? 0.0 : in[static_cast<size_t>(j)];
    }
    return make_result(std::move(out_shape), std::move(out), {x}, [index](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (size_t i = 0; i < index->size(); ++i) {
            const auto j = (*index)[i];
            if (j >= 0) g[static_cast<size_t>(j)] += self.grad[i];
        }
    });
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& dims) {
    const auto r = x.rank();
    if (static_cast<int64_t>(dims.size()) != r) throw ShapeError("permute rank mismatch");
    const auto in_strides = contiguous_strides(x.shape());
    Shape out_shape(static_cast<size_t>(r));
    std::vector<int64_t> src_strides(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const auto d = norm_axis(dims[i], r);
        out_shape[i] = x.shape()[d];
        src_strides[i] = in_strides[d];
    }
    const auto n = numel(out_shape);
    auto index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t off = 0;
    for (int64_t i = 0; i < n; ++i) {
        (*index)[i] = off;
        for (int64_t d = r; d-- > 0;) {
            ++idx[d];
            off += src_strides[d];
            if (idx[d] < out_shape[d]) break;
            off -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    return gather(x, std::move(index), std::move(out_shape));
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
    if (xs.empty()) throw ShapeError("concat of nothing");
    const auto r = xs[0].rank();
    axis = norm_axis(axis, r);
    Shape out_shape = xs[0].shape();
    out_shape[axis] = 0;
    for (const auto& t : xs) {
        if (t.rank() != r) throw ShapeError("concat rank mismatch");
        for (int64_t i = 0; i < r; ++i)
            if (i != axis && t.shape()[i] != xs[0].shape()[i])
                throw ShapeError("concat shape mismatch " + shape_str(t.shape()) + " vs " +
                                 shape_str(xs[0].shape()));
        out_shape[axis] += t.shape()[axis];
    }
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int64_t i = axis + 1; i < r; ++i) inner *= out_shape[i];
    const int64_t total = out_shape[axis];
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    std::vector<int64_t> starts;
    int64_t start = 0;
    for (const auto& t : xs) {
        const auto len = t.shape()[axis];
        const auto in = t.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(in.begin() + o * len * inner, len * inner, out.begin() + (o * total + start) * inner);
        starts.push_back(start);
        start += len;
    }
    return make_result(std::move(out_shape), std::move(out), xs, [starts, outer, inner, total, axis](Node& self) {
        for (size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = parent(self, k);
            if (!p.requires_grad) continue;
            auto& g = p.ensure_grad();
            const auto len = p.shape[static_cast<size_t>(axis)];
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < len * inner; ++i) g[o * len * inner + i] += self.grad[(o * total + starts[k]) * inner + i];
        }
    });
}

Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length) {
    axis = norm_axis(axis, x.rank());
    if (start < 0 || length < 0 || start + length > x.shape()[axis]) throw ShapeError("narrow out of range");
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= out_shape[i];
    const auto len = x.shape()[axis];
    auto index = std::make_shared<std::vector<int64_t>>();
    index->reserve(static_cast<size_t>(outer * length * inner));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t l = 0; l < length; ++l)
            for (int64_t i = 0; i < inner; ++i) index->push_back((o * len + start + l) * inner + i);
    return gather(x, std::move(index), std::move(out_shape));
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs rank >= 2");
    const int64_t M = a.dim(-2), K = a.dim(-1);
    const int64_t bk = trans_b ? b.dim(-1) : b.dim(-2);
    const int64_t N = trans_b ? b.dim(-2) : b.dim(-1);
    if (bk != K) throw ShapeError("matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t batch = a.numel() / (M * K);
    const bool shared_b = b.rank() == 2;
    if (!shared_b && b.numel() / (K * N) != batch) throw ShapeError("matmul batch mismatch");
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(N);
    std::vector<double> out(static_cast<size_t>(batch * M * N));
    const auto va = a.data(), vb = b.data();
    const int64_t b_step = shared_b ? 0 : K * N;
    for (int64_t i = 0; i < batch; ++i) {
        CMapMat A(va.data() + i * M * K, M, K);
        MapMat C(out.data() + i * M * N, M, N);
        if (trans_b)
            C.noalias() = A * CMapMat(vb.data() + i * b_step, N, K).transpose();
        else
            C.noalias() = A * CMapMat(vb.data() + i * b_step, K, N);
    }
    return make_result(std::move(out_shape), std::move(out), {a, b},
                       [batch, M, K, N, b_step, trans_b](Node& self) {
                           auto& pa = parent(self, 0);
                           auto& pb = parent(self, 1);
                           for (int64_t i = 0; i < batch; ++i) {
                               CMapMat G(self.grad.data() + i * M * N, M, N);
                               if (pa.requires_grad) {
                                   MapMat GA(pa.ensure_grad().data() + i * M * K, M, K);
                                   if (trans_b)
                                       GA.noalias() += G * CMapMat(pb.value.data() + i * b_step, N, K);
                                   else
                                       GA.noalias() += G * CMapMat(pb.value.data() + i * b_step, K, N).transpose();
                               }
                               if (pb.requires_grad) {
                                   CMapMat A(pa.value.data() + i * M * K, M, K);
                                   if (trans_b) {
                                       MapMat GB(pb.ensure_grad().data() + i * b_step, N, K);
                                       GB.noalias() += G.transpose() * A;
                                   } else {
                                       MapMat GB(pb.ensure_grad().data() + i * b_step, K, N);
                                       GB.noalias() += A.transpose() * G;
                                   }
                               }
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int64_t in = weight.dim(1), out_dim = weight.dim(0);
    if (x.dim(-1) != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    if (bias.defined() && bias.numel() != out_dim) throw ShapeError("linear: bias size");
    const int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    std::vector<double> out(static_cast<size_t>(rows * out_dim));
    MapMat Y(out.data(), rows, out_dim);
    Y.noalias() = CMapMat(x.data().data(), rows, in) * CMapMat(weight.data().data(), out_dim, in).transpose();
    if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
    std::vector<Tensor> parents{x, weight};
    const bool has_bias = bias.defined();
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(out_shape), std::move(out), std::move(parents),
                       [rows, in, out_dim, has_bias](Node& self) {
                           CMapMat G(self.grad.data(), rows, out_dim);
                           auto& px = parent(self, 0);
                           auto& pw = parent(self, 1);
                           if (px.requires_grad)
                               MapMat(px.ensure_grad().data(), rows, in).noalias() +=
                                   G * CMapMat(pw.value.data(), out_dim, in);
                           if (pw.requires_grad)
                               MapMat(pw.ensure_grad().data(), out_dim, in).noalias() +=
                                   G.transpose() * CMapMat(px.value.data(), rows, in);
                           if (has_bias) {
                               auto& pb = parent(self, 2);
                               if (pb.requires_grad) {
                                   // Fixed summation order: Eigen's reductions depend on buffer alignment.
                                   std::vector<double> acc(static_cast<size_t>(out_dim), 0.0);
                                   for (int64_t r = 0; r < rows; ++r)
                                       for (int64_t o = 0; o < out_dim; ++o) acc[static_cast<size_t>(o)] += G(r, o);
                                   auto& gb = pb.ensure_grad();
                                   for (int64_t o = 0; o < out_dim; ++o) gb[static_cast<size_t>(o)] += acc[static_cast<size_t>(o)];
                               }
                           }
                       });
}

Tensor softmax(const Tensor& x) {
    const int64_t n = x.dim(-1);
    const int64_t rows = x.numel() / n;
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * n;
        double* dst = out.data() + r * n;
        const double mx = *std::max_element(src, src + n);
        double z = 0.0;
        for (int64_t i = 0; i < n; ++i) z += (dst[i] = std::exp(src[i] - mx));
        for (int64_t i = 0; i < n; ++i) dst[i] /= z;
    }
    return make_result(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (int64_t i = 0; i < n; ++i) dot += y[i] * gy[i];
            for (int64_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t n = x.dim(-1);
    if (gamma.numel() != n || beta.numel() != n) throw ShapeError("layer_norm affine size");
    const int64_t rows = x.numel() / n;
    const auto in = x.data();
    const auto gm = gamma.data(), bt = beta.data();
    std::vector<double> out(in.size());
    auto xhat = std::make_shared<std::vector<double>>(in.size());
    auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * n;
        double mu = 0.0, var = 0.0;
        for (int64_t i = 0; i < n; ++i) mu += src[i];
        mu /= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(n);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (int64_t i = 0; i < n; ++i) {
            const double h = (src[i] - mu) * rs;
            (*xhat)[r * n + i] = h;
            out[r * n + i] = h * gm[i] + bt[i];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [rows, n, xhat, rstd](Node& self) {
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        const auto& gm = pg.value;
        for (int64_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * n;
            const double* h = xhat->data() + r * n;
            if (pg.requires_grad) {
                auto& gg = pg.ensure_grad();
                for (int64_t i = 0; i < n; ++i) gg[i] += gy[i] * h[i];
            }
            if (pb.requires_grad) {
                auto& gb = pb.ensure_grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += gy[i];
            }
            if (px.requires_grad) {
                double m1 = 0.0, m2 = 0.0;
                for (int64_t i = 0; i < n; ++i) {
                    const double d = gy[i] * gm[i];
                    m1 += d;
                    m2 += d * h[i];
                }
                m1 /= static_cast<double>(n);
                m2 /= static_cast<double>(n);
                auto& gx = px.ensure_grad();
                for (int64_t i = 0; i < n; ++i) gx[r * n + i] += (*rstd)[r] * (gy[i] * gm[i] - m1 - h[i] * m2);
            }
        }
    });
}

namespace {

// im2col for one sample: col[(oy*Wo+ox), (ci*k+ky)*k+kx].
struct ConvGeom {
    int64_t cin, h, w, k, stride, pad, ho, wo;
    int64_t cols() const { return cin * k * k; }
    int64_t positions() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
    for (int64_t oy = 0; oy < g.ho; ++oy)
        for (int64_t ox = 0; ox < g.wo; ++ox) {
            double* row = col + (oy * g.wo + ox) * g.cols();
            for (int64_t ci = 0; ci < g.cin; ++ci)
                for (int64_t ky = 0; ky < g.k; ++ky) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    for (int64_t kx = 0; kx < g.k; ++kx) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        *row++ = (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) ? 0.0 : x[(ci * g.h + iy) * g.w + ix];
                    }
                }
        }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
    for (int64_t oy = 0; oy < g.ho; ++oy)
        for (int64_t ox = 0; ox < g.wo; ++ox) {
            const double* row = col + (oy * g.wo + ox) * g.cols();
            for (int64_t ci = 0; ci < g.cin; ++ci)
                for (int64_t ky = 0; ky < g.k; ++ky) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    for (int64_t kx = 0; kx < g.k; ++kx, ++row) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) x[(ci * g.h + iy) * g.w + ix] += *row;
                    }
                }
        }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    if (x.rank() != 4 || weight.rank() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
    if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d expects square kernels");
    if (stride < 1 || pad < 0) throw ConfigError("conv2d stride/pad");
    const int64_t B = x.dim(0), cout = weight.dim(0);
    ConvGeom g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, pad, 0, 0};
    if (weight.dim(1) != g.cin)
        throw ShapeError("conv2d channels: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d output would be empty");
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != cout) throw ShapeError("conv2d bias size");

    std::vector<double> out(static_cast<size_t>(B * cout * g.positions()));
    std::vector<double> col(static_cast<size_t>(g.positions() * g.cols()));
    CMapMat W(weight.data().data(), cout, g.cols());
    for (int64_t b = 0; b < B; ++b) {
        im2col(x.data().data() + b * g.cin * g.h * g.w, g, col.data());
        MapMat Y(out.data() + b * cout * g.positions(), cout, g.positions());
        Y.noalias() = W * CMapMat(col.data(), g.positions(), g.cols()).transpose();
        if (has_bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), cout);
    }
    std::vector<Tensor> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result({B, cout, g.ho, g.wo}, std::move(out), std::move(parents), [g, B, cout, has_bias](Node& self) {
        auto& px = parent(self, 0);
        auto& pw = parent(self, 1);
        std::vector<double> col(static_cast<size_t>(g.positions() * g.cols()));
        std::vector<double> dcol(col.size());
        for (int64_t b = 0; b < B; ++b) {
            CMapMat G(self.grad.data() + b * cout * g.positions(), cout, g.positions());
            if (pw.requires_grad) {
                im2col(px.value.data() + b * g.cin * g.h * g.w, g, col.data());
                MapMat(pw.ensure_grad().data(), cout, g.cols()).noalias() +=
                    G * CMapMat(col.data(), g.positions(), g.cols());
            }
            if (px.requires_grad) {
                MapMat(dcol.data(), g.positions(), g.cols()).noalias() =
                    G.transpose() * CMapMat(pw.value.data(), cout, g.cols());
                col2im_add(dcol.data(), g, px.ensure_grad().data() + b * g.cin * g.h * g.w);
            }
            if (has_bias) {
                auto& pb = parent(self, 2);
                if (pb.requires_grad) {
                    // Fixed summation order: Eigen's row reductions depend on buffer alignment.
                    auto& gb = pb.ensure_grad();
                    for (int64_t o = 0; o < cout; ++o) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < g.positions(); ++i) acc += G(o, i);
                        gb[static_cast<size_t>(o)] += acc;
                    }
                }
            }
        }
    });
}

namespace {

struct Interp {
    std::vector<int64_t> i0, i1;
    std::vector<double> w0, w1;
};

Interp interp_axis(int64_t in, int64_t out) {
    Interp r;
    const double sc = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * sc - 0.5;
        if (src < 0) src = 0;
        auto a = static_cast<int64_t>(std::floor(src));
        if (a > in - 1) a = in - 1;
        const int64_t b = std::min(a + 1, in - 1);
        const double l = src - static_cast<double>(a);
        r.i0.push_back(a);
        r.i1.push_back(b);
        r.w0.push_back(1.0 - l);
        r.w1.push_back(l);
    }
    return r;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.rank() < 2) throw ShapeError("resize_bilinear needs rank >= 2");
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear target must be positive");
    const int64_t H = x.dim(-2), W = x.dim(-1);
    const int64_t planes = x.numel() / (H * W);
    auto ry = std::make_shared<Interp>(interp_axis(H, out_h));
    auto rx = std::make_shared<Interp>(interp_axis(W, out_w));
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = out_h;
    out_shape.back() = out_w;
    std::vector<double> out(static_cast<size_t>(planes * out_h * out_w));
    const auto in = x.data();
    for (int64_t p = 0; p < planes; ++p) {
        const double* src = in.data() + p * H * W;
        double* dst = out.data() + p * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const double* r0 = src + ry->i0[oy] * W;
            const double* r1 = src + ry->i1[oy] * W;
            const double a0 = ry->w0[oy], a1 = ry->w1[oy];
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const auto c0 = rx->i0[ox], c1 = rx->i1[ox];
                dst[oy * out_w + ox] = a0 * (rx->w0[ox] * r0[c0] + rx->w1[ox] * r0[c1]) +
                                       a1 * (rx->w0[ox] * r1[c0] + rx->w1[ox] * r1[c1]);
            }
        }
    }
    return make_result(std::move(out_shape), std::move(out), {x}, [ry, rx, planes, H, W, out_h, out_w](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (int64_t pl = 0; pl < planes; ++pl) {
            double* dst = g.data() + pl * H * W;
            const double* gy = self.grad.data() + pl * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                double* r0 = dst + ry->i0[oy] * W;
                double* r1 = dst + ry->i1[oy] * W;
                const double a0 = ry->w0[oy], a1 = ry->w1[oy];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const double v = gy[oy * out_w + ox];
                    const auto c0 = rx->i0[ox], c1 = rx->i1[ox];
                    r0[c0] += a0 * rx->w0[ox] * v;
                    r0[c1] += a0 * rx->w1[ox] * v;
                    r1[c0] += a1 * rx->w0[ox] * v;
                    r1[c1] += a1 * rx->w1[ox] * v;
                }
            }
        }
    });
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const int64_t n = x.dim(-1);
    const int64_t rows = x.numel() / n;
    const auto in = x.data();
    std::vector<double> out(in.size(), 0.0);
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += in[r * n + i] * in[r * n + i];
        const double nr = std::sqrt(s);
        (*norms)[r] = nr;
        if (nr >= eps)
            for (int64_t i = 0; i < n; ++i) out[r * n + i] = in[r * n + i] / nr;
    }
    return make_result(x.shape(), std::move(out), {x}, [rows, n, norms, eps](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double nr = (*norms)[r];
            if (nr < eps) continue;
            const double* y = self.value.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (int64_t i = 0; i < n; ++i) dot += y[i] * gy[i];
            for (int64_t i = 0; i < n; ++i) g[r * n + i] += (gy[i] - y[i] * dot) / nr;
        }
    });
}

Tensor rope2d(const Tensor& x, const std::vector<int64_t>& rows, const std::vector<int64_t>& cols, double base) {
    const int64_t D = x.dim(-1);
    if (D % 2 != 0) throw ConfigError("rope2d: channel count " + std::to_string(D) + " is odd");
    if (x.rank() < 2) throw ShapeError("rope2d expects [..., T, D]");
    const int64_t T = x.dim(-2);
    if (static_cast<int64_t>(rows.size()) != T || static_cast<int64_t>(cols.size()) != T)
        throw ShapeError("rope2d: position count does not match token count");
    const int64_t pairs = D / 2;
    const int64_t row_pairs = (pairs + 1) / 2;
    const int64_t col_pairs = pairs - row_pairs;
    // cos/sin table [T, pairs]
    auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(T * pairs));
    auto sn = std::make_shared<std::vector<double>>(static_cast<size_t>(T * pairs));
    for (int64_t t = 0; t < T; ++t)
        for (int64_t p = 0; p < pairs; ++p) {
            const bool is_row = p < row_pairs;
            const int64_t band = is_row ? p : p - row_pairs;
            const int64_t bands = is_row ? row_pairs : col_pairs;
            const double freq = std::pow(base, -static_cast<double>(band) / static_cast<double>(bands));
            const double ang = freq * static_cast<double>(is_row ? rows[t] : cols[t]);
            (*cs)[t * pairs + p] = std::cos(ang);
            (*sn)[t * pairs + p] = std::sin(ang);
        }
    const int64_t batch = x.numel() / (T * D);
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t p = 0; p < pairs; ++p) {
                const int64_t o = (b * T + t) * D + 2 * p;
                const double c = (*cs)[t * pairs + p], s = (*sn)[t * pairs + p];
                out[o] = in[o] * c - in[o + 1] * s;
                out[o + 1] = in[o] * s + in[o + 1] * c;
            }
    return make_result(x.shape(), std::move(out), {x}, [cs, sn, batch, T, D, pairs](Node& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t q = 0; q < pairs; ++q) {
                    const int64_t o = (b * T + t) * D + 2 * q;
                    const double c = (*cs)[t * pairs + q], s = (*sn)[t * pairs + q];
                    g[o] += self.grad[o] * c + self.grad[o + 1] * s;
                    g[o + 1] += -self.grad[o] * s + self.grad[o + 1] * c;
                }
    });
}

}  // namespace ovseg
