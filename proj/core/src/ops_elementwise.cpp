#include <cmath>
#include <numbers>

#include "ofakd/ops.hpp"
#include "op_support.hpp"

namespace ofakd {

namespace {

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::relu: return "relu";
        case UnaryOp::gelu: return "gelu";
        case UnaryOp::log: return "log";
        case UnaryOp::exp: return "exp";
    }
    return "unary";
}

const char* binary_name(BinaryOp op) {
    switch (op) {
        case BinaryOp::add: return "add";
        case BinaryOp::sub: return "sub";
        case BinaryOp::mul: return "mul";
    }
    return "binary";
}

// True when b matches a exactly or equals a's trailing dimensions.
bool broadcastable(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

template <typename T>
T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_slope(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
    const auto x = a.data();
    std::vector<T> y(x.size());
    switch (op) {
        case UnaryOp::relu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
            break;
        case UnaryOp::gelu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_value(x[i]);
            break;
        case UnaryOp::log:
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (!(x[i] > T(0))) {
                    throw DomainError("log of non-positive value " + std::to_string(x[i]) +
                                      " at index " + std::to_string(i));
                }
                y[i] = std::log(x[i]);
            }
            break;
        case UnaryOp::exp:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
            break;
    }
    auto out = detail::make_output(a.shape(), std::move(y), unary_name(op));
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        std::weak_ptr<detail::TensorImpl<T>> ow = out.impl_ptr();
        detail::record<T>(unary_name(op), out, {a}, [ai, ow, op](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            const auto& xv = ai->data;
            switch (op) {
                case UnaryOp::relu:
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        if (xv[i] > T(0)) ga[i] += g[i];
                    }
                    break;
                case UnaryOp::gelu:
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_slope(xv[i]);
                    break;
                case UnaryOp::log:
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xv[i];
                    break;
                case UnaryOp::exp: {
                    auto o = ow.lock();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * o->data[i];
                    break;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!broadcastable(a.shape(), b.shape())) {
        throw DimensionError(std::string(binary_name(op)) + ": shape mismatch between " +
                             detail::shape_pair(a.shape(), b.shape()) +
                             " (only trailing-dimension bias broadcast is supported)");
    }
    const auto x = a.data();
    const auto z = b.data();
    const std::size_t n = x.size();
    const std::size_t m = z.size();
    std::vector<T> y(n);
    for (std::size_t base = 0; base < n; base += m) {
        switch (op) {
            case BinaryOp::add:
                for (std::size_t j = 0; j < m; ++j) y[base + j] = x[base + j] + z[j];
                break;
            case BinaryOp::sub:
                for (std::size_t j = 0; j < m; ++j) y[base + j] = x[base + j] - z[j];
                break;
            case BinaryOp::mul:
                for (std::size_t j = 0; j < m; ++j) y[base + j] = x[base + j] * z[j];
                break;
        }
    }
    auto out = detail::make_output(a.shape(), std::move(y), binary_name(op));
    if (detail::tracking({&a, &b})) {
        auto ai = a.impl_ptr();
        auto bi = b.impl_ptr();
        detail::record<T>(binary_name(op), out, {a, b}, [ai, bi, op, m](std::span<const T> g) {
            const std::size_t n = g.size();
            if (ai->requires_grad) {
                auto& ga = ai->grad_buffer();
                if (op == BinaryOp::mul) {
                    for (std::size_t base = 0; base < n; base += m) {
                        for (std::size_t j = 0; j < m; ++j) ga[base + j] += g[base + j] * bi->data[j];
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                }
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad_buffer();
                for (std::size_t base = 0; base < n; base += m) {
                    for (std::size_t j = 0; j < m; ++j) {
                        switch (op) {
                            case BinaryOp::add: gb[j] += g[base + j]; break;
                            case BinaryOp::sub: gb[j] -= g[base + j]; break;
                            case BinaryOp::mul: gb[j] += g[base + j] * ai->data[base + j]; break;
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    const auto x = a.data();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
    auto out = detail::make_output(a.shape(), std::move(y), "scale");
    if (detail::tracking({&a})) {
        auto ai = a.impl_ptr();
        detail::record<T>("scale", out, {a}, [ai, factor](std::span<const T> g) {
            auto& ga = ai->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return out;
}

#define OFAKD_INSTANTIATE(T)                                                        \
    template Tensor<T> elementwise<T>(UnaryOp, const Tensor<T>&);                   \
    template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> scale<T>(const Tensor<T>&, T);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
