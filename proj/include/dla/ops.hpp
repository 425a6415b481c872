#pragma once

// Differentiable primitives. Every function here records a backward rule on
// the active tape when one of its operands requires a gradient, and is a
// plain forward computation otherwise. Shape errors throw
// std::invalid_argument naming the offending shapes.

#include <cstddef>
#include <span>

#include "dla/tensor.hpp"

namespace dla {

// Elementwise, operands of identical shape.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// 1 - a, elementwise.
template <typename T> Tensor<T> one_minus(const Tensor<T>& a);

// [n x p] . [p x q] -> [n x q]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Adds bias[c] along axis 1 of x (x is [n x c] or [n x c x h x w]).
template <typename T> Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

// 2x2 window, stride 2, floor on odd extents. Ties go to the first element
// in row-major order.
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x);

// Cross-correlation with zero padding.
// input [b x c x h x w], kernel [o x c x kh x kw] -> [b x o x h' x w'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 std::size_t padding = 0);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// [n x ...] -> [n x rest]
template <typename T> Tensor<T> flatten(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Sum of squared entries.
template <typename T> Tensor<T> squared_norm(const Tensor<T>& x);

// Row-wise softmax of [n x m].
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
struct CrossEntropy {
    Tensor<T> loss;           // scalar, mean negative log-likelihood
    Tensor<T> probabilities;  // [n x m], not differentiable
};

// labels are class indices in [0, m).
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// [n x m] rows of zeros with a one at each label.
template <typename T> Tensor<T> one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace dla
