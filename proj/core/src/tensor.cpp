#include "ofakd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ofakd {

std::size_t numel_of(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
    if (numel_of(shape) != data.size()) {
        throw DimensionError("shape " + to_string(shape) + " holds " +
                             std::to_string(numel_of(shape)) + " elements but data has " +
                             std::to_string(data.size()));
    }
    for (const T& v : data) {
        if (!std::isfinite(v)) throw NonFiniteError("non-finite value passed to Tensor constructor");
    }
    impl_ = std::make_shared<detail::TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    return full(std::move(shape), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    std::vector<T> data(numel_of(shape), value);
    return Tensor(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
detail::TensorImpl<T>& Tensor<T>::impl() const {
    if (!impl_) throw Error("use of an undefined tensor");
    return *impl_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    return impl().shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             to_string(s));
    }
    return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw DimensionError("item() needs a single-element tensor, got " + to_string(shape()));
    }
    return impl().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl().requires_grad = on;
    return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), std::vector<T>(data().begin(), data().end()));
}

// --- tape -----------------------------------------------------------------

namespace {

template <typename T>
GradTape<T>*& tape_slot() noexcept {
    thread_local GradTape<T>* slot = nullptr;
    return slot;
}

}  // namespace

template <typename T>
GradTape<T>* active_tape() noexcept {
    return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(GradTape<T>* tape) : previous_(tape_slot<T>()) {
    tape_slot<T>() = tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
    tape_slot<T>() = previous_;
}

template <typename T>
void GradTape<T>::record(std::string_view op, const Tensor<T>& output,
                         std::vector<Tensor<T>> inputs, BackwardFn fn) {
    auto& out = output.impl();
    out.requires_grad = true;
    out.leaf = false;
    out.tape = this;
    out.generation = generation_;
    Node node;
    node.op = std::string(op);
    node.output = output.impl_ptr();
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.impl_ptr());
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
}

template <typename T>
void GradTape<T>::clear() {
    nodes_.clear();
    ++generation_;
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
    auto& l = loss.impl();
    if (l.data.size() != 1) {
        throw TapeError("backward needs a scalar loss, got shape " + to_string(l.shape));
    }
    if (l.leaf || l.tape != this || l.generation != generation_ || nodes_.empty()) {
        throw TapeError("stale tape: the loss was not produced by the current recording "
                        "(backward already ran or no forward pass was recorded)");
    }

    std::unordered_set<detail::TensorImpl<T>*> leaves;
    for (auto& node : nodes_) {
        for (auto& in : node.inputs) {
            if (in->leaf && in->requires_grad) {
                in->grad_buffer();
                leaves.insert(in.get());
            }
        }
    }

    l.grad.assign(1, T{1});
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& out = *it->output;
        if (out.grad.empty()) continue;
        it->backward(out.grad);
        // Intermediate adjoints are no longer needed once propagated.
        std::vector<T>().swap(out.grad);
    }

    for (auto* leaf : leaves) {
        for (const T& g : leaf->grad) {
            if (!std::isfinite(g)) {
                nodes_.clear();
                ++generation_;
                throw NonFiniteError("non-finite gradient produced by backward");
            }
        }
    }
    nodes_.clear();
    ++generation_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    auto* tape = active_tape<T>();
    if (tape == nullptr) {
        throw TapeError("backward called without an active tape");
    }
    tape->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template GradTape<float>* active_tape<float>() noexcept;
template GradTape<double>* active_tape<double>() noexcept;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace ofakd
