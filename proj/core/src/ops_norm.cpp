#include <cmath>

#include "ofakd/ops.hpp"
#include "op_support.hpp"

namespace ofakd {

namespace {

// Normalises `chunks` contiguous runs of `len` elements, then applies
// gain/bias indexed by channel(chunk, i).
template <typename T, typename ChannelFn>
Tensor<T> normalize_chunks(const char* name, const Tensor<T>& x, const Tensor<T>& gain,
                           const Tensor<T>& bias, std::size_t chunks, std::size_t len, T eps,
                           ChannelFn channel) {
    const auto xv = x.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(chunks);
    std::vector<T> y(xv.size());
    for (std::size_t c = 0; c < chunks; ++c) {
        const T* in = xv.data() + c * len;
        T mu = 0;
        for (std::size_t i = 0; i < len; ++i) mu += in[i];
        mu /= static_cast<T>(len);
        T var = 0;
        for (std::size_t i = 0; i < len; ++i) var += (in[i] - mu) * (in[i] - mu);
        var /= static_cast<T>(len);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[c] = inv;
        for (std::size_t i = 0; i < len; ++i) {
            const T h = (in[i] - mu) * inv;
            xhat[c * len + i] = h;
            const std::size_t ch = channel(c, i);
            y[c * len + i] = h * gv[ch] + bv[ch];
        }
    }
    auto out = detail::make_output(x.shape(), std::move(y), name);
    if (detail::tracking({&x, &gain, &bias})) {
        auto xi = x.impl_ptr();
        auto gi = gain.impl_ptr();
        auto bi = bias.impl_ptr();
        detail::record<T>(name, out, {x, gain, bias},
                          [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), chunks, len,
                           channel](std::span<const T> g) {
            std::vector<T> dxhat(len);
            for (std::size_t c = 0; c < chunks; ++c) {
                const T* gc = g.data() + c * len;
                const T* hc = xhat.data() + c * len;
                if (gi->requires_grad || bi->requires_grad) {
                    for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t ch = channel(c, i);
                        if (gi->requires_grad) gi->grad_buffer()[ch] += gc[i] * hc[i];
                        if (bi->requires_grad) bi->grad_buffer()[ch] += gc[i];
                    }
                }
                if (!xi->requires_grad) continue;
                T mean_d = 0;
                T mean_dh = 0;
                for (std::size_t i = 0; i < len; ++i) {
                    dxhat[i] = gc[i] * gi->data[channel(c, i)];
                    mean_d += dxhat[i];
                    mean_dh += dxhat[i] * hc[i];
                }
                mean_d /= static_cast<T>(len);
                mean_dh /= static_cast<T>(len);
                auto& gx = xi->grad_buffer();
                for (std::size_t i = 0; i < len; ++i) {
                    gx[c * len + i] += inv_std[c] * (dxhat[i] - mean_d - hc[i] * mean_dh);
                }
            }
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
        bias.dim(0) != x.shape().back()) {
        throw DimensionError("layernorm: gain/bias " + detail::shape_pair(gain.shape(), bias.shape()) +
                             " do not match last extent of " + to_string(x.shape()));
    }
    const std::size_t d = x.shape().back();
    return normalize_chunks("layernorm", x, gain, bias, x.numel() / d, d, eps,
                            [](std::size_t, std::size_t i) { return i; });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::size_t groups, T eps) {
    if (x.rank() < 2) throw DimensionError("group_norm: needs [B x C x ...], got " + to_string(x.shape()));
    const std::size_t channels = x.dim(1);
    if (groups == 0 || channels % groups != 0) {
        throw DimensionError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                             std::to_string(channels) + " channels");
    }
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != channels || bias.dim(0) != channels) {
        throw DimensionError("group_norm: gain/bias " + detail::shape_pair(gain.shape(), bias.shape()) +
                             " do not match " + std::to_string(channels) + " channels");
    }
    const std::size_t spatial = x.numel() / (x.dim(0) * channels);
    const std::size_t per_group = channels / groups;
    const std::size_t len = per_group * spatial;
    return normalize_chunks("group_norm", x, gain, bias, x.dim(0) * groups, len, eps,
                            [groups, per_group, spatial](std::size_t chunk, std::size_t i) {
                                return (chunk % groups) * per_group + i / spatial;
                            });
}

template Tensor<float> layernorm<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> layernorm<double>(const Tensor<double>&, const Tensor<double>&,
                                          const Tensor<double>&, double);
template Tensor<float> group_norm<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                         std::size_t, float);
template Tensor<double> group_norm<double>(const Tensor<double>&, const Tensor<double>&,
                                           const Tensor<double>&, std::size_t, double);

}  // namespace ofakd
