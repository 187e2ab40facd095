#include "ovseg/nn.hpp"

#include <cmath>

#include "ovseg/errors.hpp"

namespace ovseg {

Tensor ParamStore::add(const std::string& name, Tensor t, ParamGroup group) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, t, group});
    return t;
}

Tensor ParamStore::add_uniform(const std::string& name, Shape shape, ParamGroup group, double bound, Rng& rng) {
    auto t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    return add(name, t, group);
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, ParamGroup group, double value) {
    return add(name, Tensor::full(std::move(shape), value), group);
}

const Param& ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("no parameter named " + name);
    return params_[it->second];
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Linear::Linear(const LayerCtx& ctx, int64_t in, int64_t out, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ctx.store.add_uniform(ctx.prefix + "weight", {out, in}, ctx.group, bound, ctx.rng);
    if (with_bias) bias = ctx.store.add_uniform(ctx.prefix + "bias", {out}, ctx.group, bound, ctx.rng);
}

LayerNorm::LayerNorm(const LayerCtx& ctx, int64_t dim) {
    gamma = ctx.store.add_constant(ctx.prefix + "gamma", {dim}, ctx.group, 1.0);
    beta = ctx.store.add_constant(ctx.prefix + "beta", {dim}, ctx.group, 0.0);
}

Conv2d::Conv2d(const LayerCtx& ctx, int64_t in, int64_t out, int kernel, int stride_, int pad_, bool with_bias)
    : stride(stride_), pad(pad_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight = ctx.store.add_uniform(ctx.prefix + "weight", {out, in, kernel, kernel}, ctx.group, bound, ctx.rng);
    if (with_bias) bias = ctx.store.add_uniform(ctx.prefix + "bias", {out}, ctx.group, bound, ctx.rng);
}

Mlp::Mlp(const LayerCtx& ctx, int64_t in, int64_t hidden, int64_t out)
    : fc1(ctx.sub("fc1"), in, hidden), fc2(ctx.sub("fc2"), hidden, out) {}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads, const Tensor& mask,
                           Tensor* weights) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw ShapeError("attention expects [B, T, D] inputs");
    const int64_t B = q.dim(0), Tq = q.dim(1), Dk = q.dim(2);
    const int64_t Tk = k.dim(1), Dv = v.dim(2);
    if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != Dk || v.dim(1) != Tk)
        throw ShapeError("attention operand mismatch: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                         " v " + shape_str(v.shape()));
    if (heads < 1 || Dk % heads != 0 || Dv % heads != 0)
        throw ConfigError("head count " + std::to_string(heads) + " must divide widths " + std::to_string(Dk) +
                          "/" + std::to_string(Dv));
    const int64_t dk = Dk / heads, dv = Dv / heads;
    auto split = [&](const Tensor& t, int64_t T, int64_t d) { return permute(reshape(t, {B, T, heads, d}), {0, 2, 1, 3}); };
    const auto qh = split(q, Tq, dk), kh = split(k, Tk, dk), vh = split(v, Tk, dv);
    auto scores = scale(matmul(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (mask.defined()) {
        const int64_t nw = mask.dim(0);
        if (B % nw != 0 || mask.dim(1) != Tq || mask.dim(2) != Tk) throw ShapeError("attention mask shape");
        scores = reshape(add(reshape(scores, {B / nw, nw, heads, Tq, Tk}), reshape(mask, {1, nw, 1, Tq, Tk})),
                         {B, heads, Tq, Tk});
    }
    const auto attn = softmax(scores);
    if (weights) *weights = attn;
    const auto out = matmul(attn, vh);  // [B, h, Tq, dv]
    return reshape(permute(out, {0, 2, 1, 3}), {B, Tq, Dv});
}

TransformerBlock::TransformerBlock(const LayerCtx& ctx, int64_t dim, int64_t heads_, int64_t mlp_hidden)
    : ln1(ctx.sub("ln1"), dim),
      ln2(ctx.sub("ln2"), dim),
      qkv(ctx.sub("qkv"), dim, 3 * dim),
      proj(ctx.sub("proj"), dim, dim),
      mlp(ctx.sub("mlp"), dim, mlp_hidden, dim),
      heads(heads_) {
    if (dim % heads_ != 0) throw ConfigError("transformer width must be divisible by head count");
}

Tensor TransformerBlock::attention(const Tensor& x_normed, const Tensor& mask) const {
    const int64_t C = x_normed.dim(-1);
    const auto t = qkv(x_normed);
    const auto q = narrow(t, -1, 0, C), k = narrow(t, -1, C, C), v = narrow(t, -1, 2 * C, C);
    return proj(multihead_attention(q, k, v, heads, mask));
}

Tensor TransformerBlock::operator()(const Tensor& x, const Tensor& mask) const {
    auto y = add(x, attention(ln1(x), mask));
    return add(y, mlp(ln2(y)));
}

}  // namespace ovseg
