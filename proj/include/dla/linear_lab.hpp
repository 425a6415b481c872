#pragma once

// Linear-regression label-alignment lab.
//
// Builds synthetic (Phi, y) pairs whose labels lie exactly in the span of
// the top k* left singular vectors, and evaluates the regression objective
// in each of its algebraically related forms so the identities between them
// can be checked numerically. Everything here is 64-bit and uses hard rank
// cutoffs.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace dla::lab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Factors {
    Matrix u;  // n x d
    Vector sigma;
    Matrix v;  // d x d
};

struct LinearProblem {
    Matrix phi;        // source representation, n x d
    Vector y;          // source labels
    Matrix phi_tilde;  // target representation, n x d
    Vector y_tilde;    // target labels, never used by the objectives
    std::size_t k_star = 0;
    std::size_t k_tilde_star = 0;
    double noise = 0.0;

    // Thin SVDs of phi and phi_tilde, computed once at generation.
    Factors source;
    Factors target;
};

// Requires 1 <= k_star, k_tilde_star <= d <= n and noise >= 0.
LinearProblem gen_synthetic(std::size_t n, std::size_t d, std::size_t k_star, std::size_t k_tilde_star, double noise,
                            std::uint64_t seed);

enum class Form { full, decomposed, uda, combined, matrix_top, matrix_bottom };

std::string_view to_string(Form form);
Form parse_form(std::string_view text);

// Value of the named objective form at w with a hard cutoff after index k
// (source and target use the same k).
double linear_objective(const LinearProblem& problem, const Vector& w, std::size_t k, Form form);

// sum_{i<=k} (sigma_i w^V_i - y^U_i)^2
double aligned_top_sum(const LinearProblem& problem, const Vector& w, std::size_t k);
// sum_{i>k} (sigma~_i w^V~_i)^2
double target_tail_sum(const LinearProblem& problem, const Vector& w, std::size_t k);
// Label energy outside the top k source directions: sum_{i>k} (y^U_i)^2 plus
// the part of y orthogonal to span(U).
double dropped_label_energy(const LinearProblem& problem, std::size_t k);

Vector combined_gradient(const LinearProblem& problem, const Vector& w, std::size_t k);

class LinearDivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SolveReport {
    Vector w;
    std::size_t iterations = 0;
    double gradient_norm = 0.0;
    double objective = 0.0;
    bool converged = false;
};

// Gradient descent on the combined form from w = 0. Stops when the gradient
// norm is <= 1e-6 or after max_iters steps. Throws LinearDivergenceError if
// the objective rises for 100 consecutive steps.
SolveReport solve_linear_uda(const LinearProblem& problem, std::size_t k, double step_size, std::size_t max_iters);

// Identity suite -----------------------------------------------------------

struct LabOptions {
    std::vector<std::size_t> n_values{64};
    std::vector<std::size_t> d_values{16};
    std::size_t k_star = 4;
    std::size_t seeds = 20;
    std::size_t weight_samples = 100;
    double noise = 0.0;
    double tolerance = 1e-8;
};

struct IdentityResidual {
    std::string identity;  // e.g. "full=decomposed"
    std::size_t n = 0, d = 0;
    std::uint64_t seed = 0;
    double residual = 0.0;  // worst relative residual over the sampled w
    double bound = 0.0;     // allowed relative residual
    bool exact = true;      // equality check (false: bounded-residual check)
    bool pass = false;
};

// Throws std::invalid_argument for d > n or k_star outside [1, d].
std::vector<IdentityResidual> run_identity_suite(const LabOptions& options);

}  // namespace dla::lab
