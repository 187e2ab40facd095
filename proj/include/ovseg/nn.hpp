#pragma once

// Parameter registry and the small set of layers the stubs and the
// segmentation head are assembled from.

#include <map>
#include <string>
#include <vector>

#include "ovseg/ops.hpp"
#include "ovseg/rng.hpp"

namespace ovseg {

// Learning-rate tier a parameter is optimized in.
enum class ParamGroup { Backbone, Head };

struct Param {
    std::string name;
    Tensor tensor;
    ParamGroup group;
};

class ParamStore {
public:
    // Uniform(-bound, bound) init; bound = 0 gives zeros.
    Tensor add_uniform(const std::string& name, Shape shape, ParamGroup group, double bound, Rng& rng);
    Tensor add_constant(const std::string& name, Shape shape, ParamGroup group, double value);

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    const Param& find(const std::string& name) const;
    int64_t total_size() const;
    void zero_grad();

private:
    Tensor add(const std::string& name, Tensor t, ParamGroup group);
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;
};

// Everything needed to register a layer's parameters.
struct LayerCtx {
    ParamStore& store;
    Rng& rng;
    ParamGroup group;
    std::string prefix;

    LayerCtx sub(const std::string& name) const { return {store, rng, group, prefix + name + "."}; }
};

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(const LayerCtx& ctx, int64_t in, int64_t out, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    LayerNorm(const LayerCtx& ctx, int64_t dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct Conv2d {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(const LayerCtx& ctx, int64_t in, int64_t out, int kernel, int stride, int pad, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

// Linear -> GELU -> Linear.
struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(const LayerCtx& ctx, int64_t in, int64_t hidden, int64_t out);
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

// Scaled dot-product attention with `heads` heads.
// q, k: [B, T, Dk]; v: [B, T, Dv]; mask (optional): [nW, T, T] additive, with
// B a multiple of nW and batch b using mask b % nW.
// When `weights` is non-null it receives the softmax weights [B, heads, T, T].
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads, const Tensor& mask,
                           Tensor* weights = nullptr);

// Pre-norm transformer block: x + Attn(LN(x)); x + MLP(LN(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    Linear qkv, proj;
    Mlp mlp;
    int64_t heads = 1;

    TransformerBlock() = default;
    TransformerBlock(const LayerCtx& ctx, int64_t dim, int64_t heads, int64_t mlp_hidden);
    // x: [B, T, C]
    Tensor operator()(const Tensor& x, const Tensor& mask = Tensor()) const;
    Tensor attention(const Tensor& x_normed, const Tensor& mask) const;
};

}  // namespace ovseg
