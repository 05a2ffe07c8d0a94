#pragma once

#include <string>
#include <vector>

#include "ofakd/ops.hpp"
#include "ofakd/rng.hpp"
#include "ofakd/tensor.hpp"

namespace ofakd {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
std::size_t count_parameters(const ParameterList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
}

// Parameter initializers. Biases and normalization offsets start at zero.
template <typename T>
Tensor<T> trunc_normal_param(Shape shape, double stddev, Rng& rng);
// U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> he_uniform_param(Shape shape, std::size_t fan_in, Rng& rng);
template <typename T>
Tensor<T> constant_param(Shape shape, T value);

template <typename T>
struct Linear {
    Tensor<T> weight;  // [in x out]
    Tensor<T> bias;    // [out]

    static Linear create(std::size_t in, std::size_t out, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct LayerNorm {
    Tensor<T> gain;
    Tensor<T> bias;
    T eps = T(1e-5);

    static LayerNorm create(std::size_t dim);
    Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gain, bias, eps); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct GroupNorm {
    Tensor<T> gain;
    Tensor<T> bias;
    std::size_t groups = 1;
    T eps = T(1e-5);

    static GroupNorm create(std::size_t channels);
    Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, gain, bias, groups, eps); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [out x in/groups x k x k]
    Tensor<T> bias;    // undefined when the conv is followed by a norm
    Conv2dParams params;

    static Conv2d create(std::size_t in, std::size_t out, std::size_t kernel, Conv2dParams params,
                         bool with_bias, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, params); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// conv -> group norm -> relu
template <typename T>
struct ConvUnit {
    Conv2d<T> conv;
    GroupNorm<T> norm;

    static ConvUnit create(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return relu(norm(conv(x))); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// relu(x + norm(conv3x3(x)))
template <typename T>
struct ResidualBlock {
    Conv2d<T> conv;
    GroupNorm<T> norm;

    static ResidualBlock create(std::size_t channels, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return relu(add(x, norm(conv(x)))); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// Pre-norm multi-head self-attention + GELU MLP on [B x N x D] tokens.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> norm1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNorm<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;
    std::size_t heads = 1;

    static TransformerBlock create(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// Token-mixing MLP across the N axis, then channel-mixing MLP across D.
template <typename T>
struct MixerBlock {
    LayerNorm<T> norm1;
    Linear<T> token_fc1;
    Linear<T> token_fc2;
    LayerNorm<T> norm2;
    Linear<T> channel_fc1;
    Linear<T> channel_fc2;

    static MixerBlock create(std::size_t tokens, std::size_t dim, std::size_t token_hidden,
                             std::size_t channel_hidden, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// [B x C x H x W] -> [B x (H/p * W/p) x C*p*p]
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);

// [B x C x H x W] -> [B x C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& maps);

}  // namespace ofakd
