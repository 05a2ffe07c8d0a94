#include <Eigen/Core>
#include <numeric>

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

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// dst[out_index] = src[in_index] where out axis i walks input axis axes[i].
template <typename T>
void permute_into(const T* src, const Shape& in_shape, const std::vector<std::size_t>& axes,
                  T* dst, bool accumulate_back) {
    const std::size_t rank = in_shape.size();
    const auto in_strides = strides_of(in_shape);
    Shape out_shape(rank);
    std::vector<std::size_t> step(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[axes[i]];
        step[i] = in_strides[axes[i]];
    }
    const std::size_t n = numel_of(in_shape);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t o = 0; o < n; ++o) {
        if (accumulate_back) {
            // src is the output-layout gradient, dst the input-layout gradient.
            dst[offset] += src[o];
        } else {
            dst[o] = src[offset];
        }
        for (std::size_t d = rank; d-- > 0;) {
            if (++counter[d] < out_shape[d]) {
                offset += step[d];
                break;
            }
            offset -= step[d] * (out_shape[d] - 1);
            counter[d] = 0;
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel_of(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " +
                             to_string(shape));
    }
    auto src = a.data();
    auto out = detail::make_output(std::move(shape), std::vector<T>(src.begin(), src.end()),
                                   "reshape");
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        detail::record<T>("reshape", out, {a}, [ai](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
    const auto& s = a.shape();
    if (axes.size() != s.size()) {
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                             to_string(s));
    }
    std::vector<bool> seen(axes.size(), false);
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= axes.size() || seen[axes[i]]) {
            throw DimensionError("permute: axes are not a permutation of 0.." +
                                 std::to_string(axes.size() - 1));
        }
        seen[axes[i]] = true;
        out_shape[i] = s[axes[i]];
    }
    std::vector<T> y(a.numel());
    permute_into(a.data().data(), s, axes, y.data(), false);
    auto out = detail::make_output(std::move(out_shape), std::move(y), "permute");
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        detail::record<T>("permute", out, {a}, [ai, axes](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            permute_into(g.data(), ai->shape, axes, ga.data(), true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) throw DimensionError("concat: incompatible shapes " + detail::shape_pair(first, s));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
    const std::size_t row = out_shape[axis] * inner;

    std::vector<T> y(numel_of(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t col = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            auto src = parts[p].data();
            std::copy_n(src.data() + o * widths[p], widths[p], y.data() + o * row + col);
            col += widths[p];
        }
    }
    auto out = detail::make_output(std::move(out_shape), std::move(y), "concat");
    bool track = false;
    if (active_tape<T>() != nullptr) {
        for (const auto& p : parts) track = track || p.requires_grad();
    }
    if (track) {
        std::vector<detail::ImplPtr<T>> impls;
        for (const auto& p : parts) impls.push_back(p.impl_ptr());
        detail::record<T>("concat", out, parts, [impls, widths, outer, row](std::span<const T> g) {
            for (std::size_t o = 0; o < outer; ++o) {
                std::size_t col = 0;
                for (std::size_t p = 0; p < impls.size(); ++p) {
                    if (impls[p]->requires_grad) {
                        auto& gp = impls[p]->grad_buffer();
                        for (std::size_t j = 0; j < widths[p]; ++j) {
                            gp[o * widths[p] + j] += g[o * row + col + j];
                        }
                    }
                    col += widths[p];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = a.shape();
    if (axis >= s.size() || length == 0 || start + length > s[axis]) {
        throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                             " invalid for shape " + to_string(s));
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t in_row = s[axis] * inner;
    const std::size_t out_row = length * inner;
    const std::size_t offset = start * inner;

    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<T> y(outer * out_row);
    auto src = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.data() + o * in_row + offset, out_row, y.data() + o * out_row);
    }
    auto out = detail::make_output(std::move(out_shape), std::move(y), "narrow");
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        detail::record<T>("narrow", out, {a}, [ai, outer, in_row, out_row, offset](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < out_row; ++j) ga[o * in_row + offset + j] += g[o * out_row + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: shape mismatch between " +
                             detail::shape_pair(a.shape(), b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<T> y(static_cast<std::size_t>(m * n));
    MapM<T>(y.data(), m, n).noalias() = MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), k, n);
    auto out = detail::make_output(Shape{a.dim(0), b.dim(1)}, std::move(y), "matmul");
    if (detail::tracking({&a, &b})) {
        auto ai = a.impl_ptr();
        auto bi = b.impl_ptr();
        detail::record<T>("matmul", out, {a, b}, [ai, bi, m, k, n](std::span<const T> g) {
            MapC<T> G(g.data(), m, n);
            if (ai->requires_grad) {
                MapM<T>(ai->grad_buffer().data(), m, k).noalias() +=
                    G * MapC<T>(bi->data.data(), k, n).transpose();
            }
            if (bi->requires_grad) {
                MapM<T>(bi->grad_buffer().data(), k, n).noalias() +=
                    MapC<T>(ai->data.data(), m, k).transpose() * G;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: shape mismatch between " +
                             detail::shape_pair(a.shape(), b.shape()));
    }
    const std::size_t batch = a.dim(0);
    const auto m = static_cast<Eigen::Index>(a.dim(1));
    const auto k = static_cast<Eigen::Index>(a.dim(2));
    const auto n = static_cast<Eigen::Index>(b.dim(2));
    const std::size_t sa = static_cast<std::size_t>(m * k);
    const std::size_t sb = static_cast<std::size_t>(k * n);
    const std::size_t sy = static_cast<std::size_t>(m * n);
    std::vector<T> y(batch * sy);
    for (std::size_t i = 0; i < batch; ++i) {
        MapM<T>(y.data() + i * sy, m, n).noalias() =
            MapC<T>(a.data().data() + i * sa, m, k) * MapC<T>(b.data().data() + i * sb, k, n);
    }
    auto out = detail::make_output(Shape{batch, a.dim(1), b.dim(2)}, std::move(y), "bmm");
    if (detail::tracking({&a, &b})) {
        auto ai = a.impl_ptr();
        auto bi = b.impl_ptr();
        detail::record<T>("bmm", out, {a, b}, [=](std::span<const T> g) {
            for (std::size_t i = 0; i < batch; ++i) {
                MapC<T> G(g.data() + i * sy, m, n);
                if (ai->requires_grad) {
                    MapM<T>(ai->grad_buffer().data() + i * sa, m, k).noalias() +=
                        G * MapC<T>(bi->data.data() + i * sb, k, n).transpose();
                }
                if (bi->requires_grad) {
                    MapM<T>(bi->grad_buffer().data() + i * sb, k, n).noalias() +=
                        MapC<T>(ai->data.data() + i * sa, m, k).transpose() * G;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
        throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                             to_string(weight.shape()));
    }
    const std::size_t in = weight.dim(0);
    const std::size_t rows = x.numel() / in;
    Tensor<T> flat = x.rank() == 2 ? x : reshape(x, Shape{rows, in});
    Tensor<T> y = matmul(flat, weight);
    if (bias.defined()) y = add(y, bias);
    if (x.rank() == 2) return y;
    Shape out_shape = x.shape();
    out_shape.back() = weight.dim(1);
    return reshape(y, std::move(out_shape));
}

#define OFAKD_INSTANTIATE(T)                                                                  \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                  \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);        \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                \
    template Tensor<T> narrow<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);   \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
