#include <Eigen/Core>

#include "ofakd/ops.hpp"
#include "op_support.hpp"

namespace ofakd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

struct ConvGeometry {
    std::size_t batch, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t stride, pad, groups;
    std::size_t ho, wo;

    std::size_t cin_g() const { return cin / groups; }
    std::size_t cout_g() const { return cout / groups; }
    std::size_t patch() const { return cin_g() * kh * kw; }
    std::size_t positions() const { return ho * wo; }
};

// cols[K x P] for one sample and group.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, std::size_t group, T* cols) {
    const std::size_t p = g.positions();
    for (std::size_t ci = 0; ci < g.cin_g(); ++ci) {
        const T* plane = image + (group * g.cin_g() + ci) * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oh * g.wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(ih) * g.w;
                    for (std::size_t ow = 0; ow < g.wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w))
                                      ? T(0)
                                      : src[static_cast<std::size_t>(iw)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t group, T* image_grad) {
    const std::size_t p = g.positions();
    for (std::size_t ci = 0; ci < g.cin_g(); ++ci) {
        T* plane = image_grad + (group * g.cin_g() + ci) * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = plane + static_cast<std::size_t>(ih) * g.w;
                    for (std::size_t ow = 0; ow < g.wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[static_cast<std::size_t>(iw)] += row[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params) {
    if (input.rank() != 4 || weight.rank() != 4) {
        throw DimensionError("conv2d: expects 4-d input and weight, got " +
                             detail::shape_pair(input.shape(), weight.shape()));
    }
    ConvGeometry g{};
    g.batch = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = params.stride;
    g.pad = params.padding;
    g.groups = params.groups;
    if (g.stride == 0 || g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0 ||
        weight.dim(1) != g.cin / g.groups) {
        throw DimensionError("conv2d: weight " + to_string(weight.shape()) +
                             " incompatible with input " + to_string(input.shape()) +
                             " (groups=" + std::to_string(g.groups) + ")");
    }
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
        throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                             " larger than padded input " + to_string(input.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
        throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " does not match " +
                             std::to_string(g.cout) + " output channels");
    }
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    const std::size_t k = g.patch();
    const std::size_t p = g.positions();
    const std::size_t in_sample = g.cin * g.h * g.w;
    const std::size_t out_sample = g.cout * p;
    std::vector<T> cols(k * p);
    std::vector<T> y(g.batch * out_sample);
    const auto x = input.data();
    const auto wv = weight.data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t gr = 0; gr < g.groups; ++gr) {
            im2col(x.data() + b * in_sample, g, gr, cols.data());
            MapM<T> out(y.data() + b * out_sample + gr * g.cout_g() * p,
                        static_cast<Eigen::Index>(g.cout_g()), static_cast<Eigen::Index>(p));
            out.noalias() = MapC<T>(wv.data() + gr * g.cout_g() * k,
                                    static_cast<Eigen::Index>(g.cout_g()), static_cast<Eigen::Index>(k)) *
                            MapC<T>(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        }
        if (bias.defined()) {
            for (std::size_t c = 0; c < g.cout; ++c) {
                T* row = y.data() + b * out_sample + c * p;
                const T bc = bias.data()[c];
                for (std::size_t i = 0; i < p; ++i) row[i] += bc;
            }
        }
    }
    auto out = detail::make_output(Shape{g.batch, g.cout, g.ho, g.wo}, std::move(y), "conv2d");
    if (detail::tracking({&input, &weight, &bias})) {
        auto xi = input.impl_ptr();
        auto wi = weight.impl_ptr();
        auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
        std::vector<Tensor<T>> inputs{input, weight};
        if (bias.defined()) inputs.push_back(bias);
        detail::record<T>("conv2d", out, std::move(inputs), [xi, wi, bi, g](std::span<const T> gout) {
            const std::size_t k = g.patch();
            const std::size_t p = g.positions();
            const std::size_t in_sample = g.cin * g.h * g.w;
            const std::size_t out_sample = g.cout * p;
            const auto K = static_cast<Eigen::Index>(k);
            const auto P = static_cast<Eigen::Index>(p);
            const auto CO = static_cast<Eigen::Index>(g.cout_g());
            std::vector<T> cols(k * p);
            std::vector<T> dcols(k * p);
            for (std::size_t b = 0; b < g.batch; ++b) {
                for (std::size_t gr = 0; gr < g.groups; ++gr) {
                    MapC<T> G(gout.data() + b * out_sample + gr * g.cout_g() * p, CO, P);
                    if (wi->requires_grad) {
                        im2col(xi->data.data() + b * in_sample, g, gr, cols.data());
                        MapM<T>(wi->grad_buffer().data() + gr * g.cout_g() * k, CO, K).noalias() +=
                            G * MapC<T>(cols.data(), K, P).transpose();
                    }
                    if (xi->requires_grad) {
                        MapM<T>(dcols.data(), K, P).noalias() =
                            MapC<T>(wi->data.data() + gr * g.cout_g() * k, CO, K).transpose() * G;
                        col2im_add(dcols.data(), g, gr, xi->grad_buffer().data() + b * in_sample);
                    }
                }
                if (bi && bi->requires_grad) {
                    auto& gb = bi->grad_buffer();
                    for (std::size_t c = 0; c < g.cout; ++c) {
                        const T* row = gout.data() + b * out_sample + c * p;
                        T acc = 0;
                        for (std::size_t i = 0; i < p; ++i) acc += row[i];
                        gb[c] += acc;
                    }
                }
            }
        });
    }
    return out;
}

template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                     Conv2dParams);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, Conv2dParams);

}  // namespace ofakd
