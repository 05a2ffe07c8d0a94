#include <cmath>

#include "ofakd/layers.hpp"

namespace ofakd {

template <typename T>
Tensor<T> trunc_normal_param(Shape shape, double stddev, Rng& rng) {
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> he_uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
    Tensor<T> t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

namespace {

std::string join(const std::string& prefix, const char* name) {
    return prefix.empty() ? std::string(name) : prefix + "." + name;
}

}  // namespace

template <typename T>
Linear<T> Linear<T>::create(std::size_t in, std::size_t out, Rng& rng) {
    return {trunc_normal_param<T>({in, out}, 0.02, rng), constant_param<T>({out}, T(0))};
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({join(prefix, "weight"), weight});
    out.push_back({join(prefix, "bias"), bias});
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(std::size_t dim) {
    return {constant_param<T>({dim}, T(1)), constant_param<T>({dim}, T(0))};
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({join(prefix, "gain"), gain});
    out.push_back({join(prefix, "bias"), bias});
}

template <typename T>
GroupNorm<T> GroupNorm<T>::create(std::size_t channels) {
    GroupNorm g{constant_param<T>({channels}, T(1)), constant_param<T>({channels}, T(0))};
    g.groups = channels % 4 == 0 ? 4 : 1;
    return g;
}

template <typename T>
void GroupNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({join(prefix, "gain"), gain});
    out.push_back({join(prefix, "bias"), bias});
}

template <typename T>
Conv2d<T> Conv2d<T>::create(std::size_t in, std::size_t out, std::size_t kernel, Conv2dParams params,
                            bool with_bias, Rng& rng) {
    const std::size_t in_per_group = in / params.groups;
    Conv2d c;
    c.weight = he_uniform_param<T>({out, in_per_group, kernel, kernel}, in_per_group * kernel * kernel, rng);
    if (with_bias) c.bias = constant_param<T>({out}, T(0));
    c.params = params;
    return c;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({join(prefix, "weight"), weight});
    if (bias.defined()) out.push_back({join(prefix, "bias"), bias});
}

template <typename T>
ConvUnit<T> ConvUnit<T>::create(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
    return {Conv2d<T>::create(in, out, 3, {stride, 1, 1}, false, rng), GroupNorm<T>::create(out)};
}

template <typename T>
void ConvUnit<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    conv.collect(join(prefix, "conv"), out);
    norm.collect(join(prefix, "norm"), out);
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(std::size_t channels, Rng& rng) {
    return {Conv2d<T>::create(channels, channels, 3, {1, 1, 1}, false, rng),
            GroupNorm<T>::create(channels)};
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    conv.collect(join(prefix, "conv"), out);
    norm.collect(join(prefix, "norm"), out);
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::create(std::size_t dim, std::size_t heads, std::size_t hidden,
                                                Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    TransformerBlock b;
    b.norm1 = LayerNorm<T>::create(dim);
    b.qkv = Linear<T>::create(dim, 3 * dim, rng);
    b.proj = Linear<T>::create(dim, dim, rng);
    b.norm2 = LayerNorm<T>::create(dim);
    b.fc1 = Linear<T>::create(dim, hidden, rng);
    b.fc2 = Linear<T>::create(hidden, dim, rng);
    b.heads = heads;
    return b;
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x) const {
    const std::size_t batch = x.dim(0);
    const std::size_t tokens = x.dim(1);
    const std::size_t dim = x.dim(2);
    const std::size_t head_dim = dim / heads;

    Tensor<T> packed = reshape(qkv(norm1(x)), {batch, tokens, 3, heads, head_dim});
    packed = permute(packed, {2, 0, 3, 1, 4});  // [3 x B x H x N x dh]
    auto part = [&](std::size_t i) {
        return reshape(narrow(packed, 0, i, 1), {batch * heads, tokens, head_dim});
    };
    const Tensor<T> q = part(0);
    const Tensor<T> k = part(1);
    const Tensor<T> v = part(2);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
    Tensor<T> attn = softmax(scale(bmm(q, permute(k, {0, 2, 1})), inv_sqrt));
    Tensor<T> ctx = reshape(bmm(attn, v), {batch, heads, tokens, head_dim});
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {batch, tokens, dim});
    Tensor<T> y = add(x, proj(ctx));
    return add(y, fc2(gelu(fc1(norm2(y)))));
}

template <typename T>
void TransformerBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    norm1.collect(join(prefix, "norm1"), out);
    qkv.collect(join(prefix, "qkv"), out);
    proj.collect(join(prefix, "proj"), out);
    norm2.collect(join(prefix, "norm2"), out);
    fc1.collect(join(prefix, "fc1"), out);
    fc2.collect(join(prefix, "fc2"), out);
}

template <typename T>
MixerBlock<T> MixerBlock<T>::create(std::size_t tokens, std::size_t dim, std::size_t token_hidden,
                                    std::size_t channel_hidden, Rng& rng) {
    MixerBlock b;
    b.norm1 = LayerNorm<T>::create(dim);
    b.token_fc1 = Linear<T>::create(tokens, token_hidden, rng);
    b.token_fc2 = Linear<T>::create(token_hidden, tokens, rng);
    b.norm2 = LayerNorm<T>::create(dim);
    b.channel_fc1 = Linear<T>::create(dim, channel_hidden, rng);
    b.channel_fc2 = Linear<T>::create(channel_hidden, dim, rng);
    return b;
}

template <typename T>
Tensor<T> MixerBlock<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> t = permute(norm1(x), {0, 2, 1});  // [B x D x N]
    t = token_fc2(gelu(token_fc1(t)));
    Tensor<T> y = add(x, permute(t, {0, 2, 1}));
    return add(y, channel_fc2(gelu(channel_fc1(norm2(y)))));
}

template <typename T>
void MixerBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    norm1.collect(join(prefix, "norm1"), out);
    token_fc1.collect(join(prefix, "token_fc1"), out);
    token_fc2.collect(join(prefix, "token_fc2"), out);
    norm2.collect(join(prefix, "norm2"), out);
    channel_fc1.collect(join(prefix, "channel_fc1"), out);
    channel_fc2.collect(join(prefix, "channel_fc2"), out);
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
    const std::size_t b = images.dim(0);
    const std::size_t c = images.dim(1);
    const std::size_t h = images.dim(2);
    const std::size_t w = images.dim(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw DimensionError("patchify: " + to_string(images.shape()) + " not divisible into " +
                             std::to_string(patch) + "x" + std::to_string(patch) + " patches");
    }
    Tensor<T> t = reshape(images, {b, c, h / patch, patch, w / patch, patch});
    t = permute(t, {0, 2, 4, 1, 3, 5});
    return reshape(t, {b, (h / patch) * (w / patch), c * patch * patch});
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& maps) {
    const std::size_t b = maps.dim(0);
    const std::size_t c = maps.dim(1);
    return mean(reshape(maps, {b, c, maps.numel() / (b * c)}), std::size_t{2});
}

#define OFAKD_INSTANTIATE(T)                                                  \
    template Tensor<T> trunc_normal_param<T>(Shape, double, Rng&);            \
    template Tensor<T> he_uniform_param<T>(Shape, std::size_t, Rng&);         \
    template Tensor<T> constant_param<T>(Shape, T);                           \
    template struct Linear<T>;                                                \
    template struct LayerNorm<T>;                                             \
    template struct GroupNorm<T>;                                             \
    template struct Conv2d<T>;                                                \
    template struct ConvUnit<T>;                                              \
    template struct ResidualBlock<T>;                                         \
    template struct TransformerBlock<T>;                                      \
    template struct MixerBlock<T>;                                            \
    template Tensor<T> patchify<T>(const Tensor<T>&, std::size_t);            \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
