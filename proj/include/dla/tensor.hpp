#pragma once

// Dense tensors with a reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// framework tensors behave. Operations in ops.hpp append a node to the
// active Tape whenever one of their operands requires a gradient; calling
// backward() on a scalar replays the tape in reverse and leaves gradients
// on every leaf that participated.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dla {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->data.assign(numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
        if (values.size() != numel(shape))
            throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                        " values do not fill shape " + to_string(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    bool defined() const { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    T& operator[](std::size_t i) { return impl_->data[i]; }
    const T& operator[](std::size_t i) const { return impl_->data[i]; }

    T item() const {
        if (size() != 1)
            throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        impl_->requires_grad = flag;
        if (!flag) impl_->grad.clear();
        return *this;
    }

    bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
    std::span<T> grad() { return impl_->grad; }
    std::span<const T> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    // Deep copy, detached from any tape.
    Tensor clone() const {
        Tensor out(shape(), std::vector<T>(impl_->data));
        return out;
    }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// The computation record. Nodes are appended in execution order, so the
// sequence is topologically sorted by construction.
template <typename T>
class Tape {
public:
    struct Node {
        std::string_view op;
        std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
        std::shared_ptr<TensorImpl<T>> output;
        std::function<void()> backward;
    };

    void record(Node node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    void backward(const Tensor<T>& loss) {
        if (!loss.defined() || loss.size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
        if (!loss.requires_grad())
            throw std::invalid_argument("backward: loss was not produced under an active record");
        auto& out = *loss.impl();
        out.ensure_grad();
        out.grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue;  // not reachable from the loss
            it->backward();
        }
        clear();
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}
}  // namespace detail

template <typename T>
Tape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

// Installs a tape for the current thread for the lifetime of the scope.
template <typename T>
class RecordScope {
public:
    explicit RecordScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
        detail::active_tape_slot<T>() = &tape;
    }
    ~RecordScope() { detail::active_tape_slot<T>() = previous_; }
    RecordScope(const RecordScope&) = delete;
    RecordScope& operator=(const RecordScope&) = delete;

private:
    Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) throw std::logic_error("backward: no active computation record");
    tape->backward(loss);
}

}  // namespace dla
