#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

// Named trainable tensors in insertion order.
template <typename T>
class ParameterSet {
public:
    // Marks the tensor as requiring a gradient. Duplicate names throw.
    Tensor<T>& add(std::string name, Tensor<T> tensor);

    Tensor<T>& at(std::string_view name);
    const Tensor<T>& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    // Subset sharing storage with this set.
    ParameterSet without(std::string_view name) const;

    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

template <typename T>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    T step_size = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    std::uint64_t step = 0;
    std::vector<std::vector<T>> first_moment;   // per parameter, adam only
    std::vector<std::vector<T>> second_moment;  // per parameter, adam only
};

// Applies one update to every parameter and zeroes the gradients. Throws
// std::logic_error if a registered parameter has no gradient.
template <typename T>
void optimizer_step(ParameterSet<T>& params, OptimizerState<T>& state);

}  // namespace dla
