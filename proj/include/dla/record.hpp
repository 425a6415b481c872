#pragma once

// Helpers for writing differentiable primitives.

#include <initializer_list>
#include <span>
#include <string_view>

#include "dla/tensor.hpp"

namespace dla::detail {

// Returns the active tape if any operand needs a gradient, else nullptr.
template <typename T>
Tape<T>* recording(std::initializer_list<const Tensor<T>*> operands) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const auto* t : operands)
        if (t->requires_grad()) return tape;
    return nullptr;
}

template <typename T>
void attach(Tape<T>* tape, std::string_view op, std::initializer_list<const Tensor<T>*> operands,
            Tensor<T>& out, std::function<void()> backward) {
    typename Tape<T>::Node node;
    node.op = op;
    for (const auto* t : operands) node.inputs.push_back(t->impl());
    out.impl()->requires_grad = true;
    node.output = out.impl();
    node.backward = std::move(backward);
    tape->record(std::move(node));
}

// Gradient buffer of an operand, or an empty span when it does not take one.
template <typename T>
std::span<T> grad_sink(const std::shared_ptr<TensorImpl<T>>& impl) {
    if (!impl->requires_grad) return {};
    impl->ensure_grad();
    return impl->grad;
}

}  // namespace dla::detail
