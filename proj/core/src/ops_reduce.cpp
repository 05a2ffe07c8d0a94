#include <algorithm>
#include <cmath>

#include "ofakd/ops.hpp"
#include "op_support.hpp"

namespace ofakd {

namespace {

const char* reduce_name(ReduceOp op) {
    switch (op) {
        case ReduceOp::sum: return "sum";
        case ReduceOp::mean: return "mean";
        case ReduceOp::l2_norm: return "l2_norm";
    }
    return "reduce";
}

// Splits a shape around `axis` into outer x extent x inner.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
    r.extent = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
    return r;
}

void require_last_axis(const Shape& s, const char* op) {
    if (s.empty()) throw DimensionError(std::string(op) + ": needs rank >= 1");
    if (s.back() < 2) {
        throw DimensionError(std::string(op) + ": needs at least 2 classes, got shape " + to_string(s));
    }
}

}  // namespace

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::optional<std::size_t> axis) {
    const Shape& s = a.shape();
    AxisSplit sp;
    Shape out_shape;
    if (axis) {
        if (*axis >= s.size()) {
            throw DimensionError(std::string(reduce_name(op)) + ": axis " + std::to_string(*axis) +
                                 " out of range for shape " + to_string(s));
        }
        sp = split_at(s, *axis);
        out_shape = s;
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    } else {
        sp.extent = a.numel();
    }
    const auto x = a.data();
    std::vector<T> y(sp.outer * sp.inner, T(0));
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t e = 0; e < sp.extent; ++e) {
            const T* row = x.data() + (o * sp.extent + e) * sp.inner;
            T* dst = y.data() + o * sp.inner;
            if (op == ReduceOp::l2_norm) {
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i] * row[i];
            } else {
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
            }
        }
    }
    if (op == ReduceOp::mean) {
        for (auto& v : y) v /= static_cast<T>(sp.extent);
    } else if (op == ReduceOp::l2_norm) {
        for (auto& v : y) v = std::sqrt(v);
    }
    auto out = detail::make_output(std::move(out_shape), std::move(y), reduce_name(op));
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        std::weak_ptr<detail::TensorImpl<T>> ow = out.impl_ptr();
        detail::record<T>(reduce_name(op), out, {a}, [ai, ow, op, sp](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            const auto& xv = ai->data;
            auto o_impl = ow.lock();
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    const std::size_t base = (o * sp.extent + e) * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                        const std::size_t r = o * sp.inner + i;
                        switch (op) {
                            case ReduceOp::sum: ga[base + i] += g[r]; break;
                            case ReduceOp::mean: ga[base + i] += g[r] / static_cast<T>(sp.extent); break;
                            case ReduceOp::l2_norm: {
                                // Subgradient 0 at the origin.
                                const T norm = o_impl->data[r];
                                if (norm > T(0)) ga[base + i] += g[r] * xv[base + i] / norm;
                                break;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, T temperature) {
    if (!(temperature > T(0))) {
        throw DomainError("softmax: temperature must be positive, got " + std::to_string(temperature));
    }
    require_last_axis(logits.shape(), "softmax");
    const std::size_t c = logits.shape().back();
    const std::size_t rows = logits.numel() / c;
    const auto x = logits.data();
    std::vector<T> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * c;
        T* out = y.data() + r * c;
        const T mx = *std::max_element(in, in + c);
        T total = 0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp((in[j] - mx) / temperature);
            total += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] /= total;
    }
    auto out = detail::make_output(logits.shape(), std::move(y), "softmax");
    if (detail::tracking({&logits})) {
        auto ai = logits.impl_ptr();
        std::weak_ptr<detail::TensorImpl<T>> ow = out.impl_ptr();
        detail::record<T>("softmax", out, {logits}, [ai, ow, c, rows, temperature](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            const auto& p = ow.lock()->data;
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * p[r * c + j];
                for (std::size_t j = 0; j < c; ++j) {
                    ga[r * c + j] += p[r * c + j] * (g[r * c + j] - dot) / temperature;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits, T temperature) {
    if (!(temperature > T(0))) {
        throw DomainError("log_softmax: temperature must be positive, got " +
                          std::to_string(temperature));
    }
    require_last_axis(logits.shape(), "log_softmax");
    const std::size_t c = logits.shape().back();
    const std::size_t rows = logits.numel() / c;
    const auto x = logits.data();
    std::vector<T> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * c;
        T* out = y.data() + r * c;
        const T mx = *std::max_element(in, in + c);
        T total = 0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp((in[j] - mx) / temperature);
        const T lse = std::log(total);
        for (std::size_t j = 0; j < c; ++j) out[j] = (in[j] - mx) / temperature - lse;
    }
    auto out = detail::make_output(logits.shape(), std::move(y), "log_softmax");
    if (detail::tracking({&logits})) {
        auto ai = logits.impl_ptr();
        std::weak_ptr<detail::TensorImpl<T>> ow = out.impl_ptr();
        detail::record<T>("log_softmax", out, {logits}, [ai, ow, c, rows, temperature](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            const auto& lp = ow.lock()->data;
            for (std::size_t r = 0; r < rows; ++r) {
                T gsum = 0;
                for (std::size_t j = 0; j < c; ++j) gsum += g[r * c + j];
                for (std::size_t j = 0; j < c; ++j) {
                    ga[r * c + j] += (g[r * c + j] - std::exp(lp[r * c + j]) * gsum) / temperature;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index) {
    if (a.rank() != 2 || index.size() != a.dim(0)) {
        throw DimensionError("pick: expects [n x C] input and n indices, got " + to_string(a.shape()) +
                             " with " + std::to_string(index.size()) + " indices");
    }
    const std::size_t n = a.dim(0);
    const std::size_t c = a.dim(1);
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<T> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] >= c) {
            throw DimensionError("pick: index " + std::to_string(idx[i]) + " out of range for " +
                                 std::to_string(c) + " classes");
        }
        y[i] = a.data()[i * c + idx[i]];
    }
    auto out = detail::make_output(Shape{n}, std::move(y), "pick");
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        detail::record<T>("pick", out, {a}, [ai, idx, c](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) ga[i * c + idx[i]] += g[i];
        });
    }
    return out;
}

#define OFAKD_INSTANTIATE(T)                                                               \
    template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, std::optional<std::size_t>); \
    template Tensor<T> softmax<T>(const Tensor<T>&, T);                                   \
    template Tensor<T> log_softmax<T>(const Tensor<T>&, T);                               \
    template Tensor<T> pick<T>(const Tensor<T>&, std::span<const std::size_t>);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
