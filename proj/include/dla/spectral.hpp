#pragma once

// Soft-gated spectral filtering of feature matrices.
//
// Given phi = U diag(sigma) V^T and gate weights w_i = 1 / (1 + exp(beta (i - k r)))
// for i = 1..r, the top filter keeps U diag(w * sigma) V^T and the bottom
// filter keeps U diag((1 - w) * sigma) V^T. k = sigmoid(k_hat) is learnable.

#include <cstddef>
#include <string_view>

#include "dla/svd.hpp"
#include "dla/tensor.hpp"

namespace dla {

enum class GradientMode {
    projected,  // U, sigma, V held constant; backward through phi V diag(w) V^T
    full,       // backward also through the SVD factors
};

enum class FilterSide { top, bottom };

std::string_view to_string(GradientMode mode);
GradientMode parse_gradient_mode(std::string_view text);

template <typename T>
struct AlignmentGate {
    Tensor<T> k_hat;  // scalar, unconstrained
    T beta = T(5);

    // sigmoid(k_hat), recorded on the active tape.
    Tensor<T> k() const;
};

// Weights for indices 1..r from the normalized rank k (a scalar tensor).
// Differentiable with respect to k.
template <typename T>
Tensor<T> gate_weights(const Tensor<T>& k, T beta, std::size_t r);

template <typename T>
Tensor<T> gate_weights(const AlignmentGate<T>& gate, std::size_t r);

// U diag(weights * sigma) V^T for phi = U diag(sigma) V^T, with weights of
// length min(n, d). Differentiable with respect to phi and weights.
template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& phi, const Tensor<T>& weights, GradientMode mode);

template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& phi, const AlignmentGate<T>& gate, FilterSide side,
                          GradientMode mode = GradientMode::projected);

// Same as above with precomputed gate weights (top uses w, bottom 1 - w).
template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& phi, const Tensor<T>& weights, FilterSide side,
                          GradientMode mode = GradientMode::projected);

// Denominator clamp for full mode: |sigma_j^2 - sigma_i^2| >= kGapClamp * sigma_max^2.
inline constexpr double kGapClamp = 1e-6;

}  // namespace dla
