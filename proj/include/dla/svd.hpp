#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

// Thin factorization phi = u * diag(sigma) * v^T with r = min(n, d).
//   u     [n x r], orthonormal columns
//   sigma  r values, nonincreasing, nonnegative
//   v     [d x r], orthonormal columns
// Sign convention: the largest-magnitude entry of each column of v is
// nonnegative (first index on ties); the matching u column follows.
template <typename T>
struct SvdFactors {
    Tensor<T> u;
    std::vector<T> sigma;
    Tensor<T> v;

    std::size_t rank() const { return sigma.size(); }
};

class SvdConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One-sided Jacobi, accumulated in double precision regardless of T.
// Throws std::invalid_argument on non-finite input and SvdConvergenceError
// if the sweep cap (100 * r) is exhausted.
template <typename T>
SvdFactors<T> thin_svd(const Tensor<T>& phi);

}  // namespace dla
