#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ofakd/tensor.hpp"

namespace ofakd::detail {

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
    if (active_tape<T>() == nullptr) return false;
    for (const auto* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void check_finite(const std::vector<T>& values, std::string_view op) {
    // Exponent-all-ones test on the bit pattern; integer ops vectorise where isfinite does not.
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7F800000ull : 0x7FF0000000000000ull);
    Bits bad = 0;
    for (const T& v : values) {
        bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
    }
    if (bad != 0) throw NonFiniteError("non-finite value produced by " + std::string(op));
}

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data, std::string_view op) {
    check_finite(data, op);
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor<T>(std::move(impl));
}

template <typename T>
void record(std::string_view op, const Tensor<T>& out, std::vector<Tensor<T>> inputs,
            typename GradTape<T>::BackwardFn fn) {
    active_tape<T>()->record(op, out, std::move(inputs), std::move(fn));
}

inline std::string shape_pair(const Shape& a, const Shape& b) {
    return to_string(a) + " and " + to_string(b);
}

}  // namespace ofakd::detail
