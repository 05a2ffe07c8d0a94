#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ofakd/error.hpp"

namespace ofakd {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() noexcept {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

template <typename T>
class GradTape;

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty when absent
    bool requires_grad = false;
    bool leaf = true;
    // Set for tensors produced while a tape was recording.
    const void* tape = nullptr;
    std::uint64_t generation = 0;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T{0});
        return grad;
    }
};

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

}  // namespace detail

// Dense row-major array with optional gradient tracking. Copies are cheap
// handles onto the same storage (like a shared buffer); use detach() for a
// deep copy. Values are never mutated by operations; only optimizers and
// initializers write through mutable_data().
template <typename T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports float (training) and double (verification)");

public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
    explicit Tensor(detail::ImplPtr<T> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T value);
    static Tensor scalar(T value);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return impl().data.size(); }

    std::span<const T> data() const { return impl().data; }
    std::span<T> mutable_data() { return impl().data; }
    T item() const;
    T at(std::size_t flat_index) const { return impl().data.at(flat_index); }

    bool requires_grad() const { return impl().requires_grad; }
    Tensor& set_requires_grad(bool on = true);
    bool is_leaf() const { return impl().leaf; }

    bool has_grad() const { return !impl().grad.empty(); }
    std::span<const T> grad() const { return impl().grad; }
    // Allocates a zero buffer when absent.
    std::span<T> mutable_grad() { return impl().grad_buffer(); }
    void zero_grad();
    void clear_grad() { impl().grad.clear(); }

    Tensor detach() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        auto src = data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
        return Tensor<U>(shape(), std::move(out));
    }

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    const detail::ImplPtr<T>& impl_ptr() const noexcept { return impl_; }
    detail::TensorImpl<T>& impl() const;

private:
    detail::ImplPtr<T> impl_;
};

// Ordered record of executed operations. Operations record themselves on the
// thread's active tape (see TapeScope) when any input requires a gradient.
template <typename T>
class GradTape {
public:
    using BackwardFn = std::function<void(std::span<const T> out_grad)>;

    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void record(std::string_view op, const Tensor<T>& output, std::vector<Tensor<T>> inputs,
                BackwardFn fn);

    // Replays adjoints in reverse. Leaf gradients accumulate, so callers zero
    // them between steps. The tape is consumed.
    void backward(const Tensor<T>& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }
    void clear();

private:
    struct Node {
        std::string op;
        detail::ImplPtr<T> output;
        std::vector<detail::ImplPtr<T>> inputs;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::uint64_t generation_ = 1;
};

template <typename T>
GradTape<T>* active_tape() noexcept;

// Makes `tape` the active tape of this thread for the scope's lifetime.
// A null tape disables recording.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>* tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* previous_;
};

template <typename T>
class NoGradScope : public TapeScope<T> {
public:
    NoGradScope() : TapeScope<T>(nullptr) {}
};

// Runs backward on the tape that produced `loss`, which must be the active one.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace ofakd
