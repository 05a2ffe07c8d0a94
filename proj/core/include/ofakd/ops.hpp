#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ofakd/tensor.hpp"

// Differentiable tensor operations. Every operation validates shapes, fails
// fast on non-finite results (NonFiniteError naming the operation) and records
// an adjoint on the active tape when an input requires a gradient.
//
// Broadcasting is limited to the bias pattern: a binary op accepts `b` whose
// shape equals the trailing dimensions of `a` (e.g. [n x d] + [d]).
namespace ofakd {

enum class UnaryOp { relu, gelu, log, exp };
enum class BinaryOp { add, sub, mul };
enum class ReduceOp { sum, mean, l2_norm };

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

// --- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a);
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise(UnaryOp::relu, a); }
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) { return elementwise(UnaryOp::gelu, a); }
template <typename T>
Tensor<T> log(const Tensor<T>& a) { return elementwise(UnaryOp::log, a); }
template <typename T>
Tensor<T> exp(const Tensor<T>& a) { return elementwise(UnaryOp::exp, a); }

// a * factor
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// --- shape ---------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> narrow(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

// --- linear algebra ------------------------------------------------------

// [m x k] x [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [B x m x k] x [B x k x n] -> [B x m x n]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * weight[in x out] (+ bias[out])
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// --- reductions & normalisation -----------------------------------------

// Without an axis the result is a scalar.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt);

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(ReduceOp::sum, a, axis);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(ReduceOp::mean, a, axis);
}
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(ReduceOp::l2_norm, a, axis);
}

// Softmax over the last axis of logits / temperature (max-subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, T temperature = T{1});
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits, T temperature = T{1});

// out[i] = a[i, index[i]] for a of shape [n x C].
template <typename T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index);

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// x[B x C x ...] normalised over (C/groups x spatial) per sample and group,
// then scaled per channel.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::size_t groups, T eps);

// --- convolution ---------------------------------------------------------

// Cross-correlation. input [B x Cin x H x W], weight [Cout x Cin/groups x kh x kw],
// optional bias [Cout] (pass an undefined tensor for none).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params = {});

}  // namespace ofakd
