#include "dla/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

namespace dla {

namespace {

// Column-major working copy: column j occupies [j*rows, (j+1)*rows).
struct Columns {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
    double* col(std::size_t j) { return values.data() + j * rows; }
    const double* col(std::size_t j) const { return values.data() + j * rows; }
};

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void rotate(double* a, double* b, std::size_t n, double c, double s) {
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i], y = b[i];
        a[i] = c * x - s * y;
        b[i] = s * x + c * y;
    }
}

// Fills columns flagged in `missing` with unit vectors orthogonal to the
// rest, using the standard basis as candidates.
void complete_basis(Columns& u, const std::vector<bool>& missing) {
    std::size_t candidate = 0;
    std::vector<double> e(u.rows);
    for (std::size_t j = 0; j < u.cols; ++j) {
        if (!missing[j]) continue;
        for (; candidate < u.rows; ++candidate) {
            std::fill(e.begin(), e.end(), 0.0);
            e[candidate] = 1.0;
            for (int pass = 0; pass < 2; ++pass)
                for (std::size_t k = 0; k < u.cols; ++k) {
                    if (k == j || (missing[k] && k > j)) continue;
                    const double proj = dot(e.data(), u.col(k), u.rows);
                    for (std::size_t i = 0; i < u.rows; ++i) e[i] -= proj * u.col(k)[i];
                }
            const double norm = std::sqrt(dot(e.data(), e.data(), u.rows));
            if (norm > 0.5) {
                for (std::size_t i = 0; i < u.rows; ++i) u.col(j)[i] = e[i] / norm;
                ++candidate;
                break;
            }
        }
    }
}

}  // namespace

template <typename T>
SvdFactors<T> thin_svd(const Tensor<T>& phi) {
    if (phi.rank() != 2 || phi.dim(0) == 0 || phi.dim(1) == 0)
        throw std::invalid_argument("thin_svd: expected a nonempty matrix, got " + to_string(phi.shape()));
    for (std::size_t i = 0; i < phi.size(); ++i)
        if (!std::isfinite(static_cast<double>(phi[i])))
            throw std::invalid_argument("thin_svd: non-finite entry at flat index " + std::to_string(i));

    const std::size_t n = phi.dim(0), d = phi.dim(1);
    // Work on the orientation with at least as many rows as columns.
    const bool transposed = n < d;
    const std::size_t rows = transposed ? d : n;
    const std::size_t r = transposed ? n : d;

    Columns a{rows, r, std::vector<double>(rows * r)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double x = static_cast<double>(phi[i * d + j]);
            if (transposed)
                a.col(i)[j] = x;
            else
                a.col(j)[i] = x;
        }
    Columns rot{r, r, std::vector<double>(r * r, 0.0)};
    for (std::size_t j = 0; j < r; ++j) rot.col(j)[j] = 1.0;

    const double frob2 = dot(a.values.data(), a.values.data(), a.values.size());
    const double eps = std::numeric_limits<double>::epsilon();
    const double tol = static_cast<double>(rows) * eps;
    const double negligible = eps * eps * frob2;
    const std::size_t max_sweeps = 100 * r;

    std::vector<double> norms(r);
    for (std::size_t j = 0; j < r; ++j) norms[j] = dot(a.col(j), a.col(j), rows);

    bool converged = r == 1;
    std::size_t sweep = 0;
    for (; sweep < max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < r; ++p)
            for (std::size_t q = p + 1; q < r; ++q) {
                const double alpha = norms[p], beta = norms[q];
                if (alpha <= negligible || beta <= negligible) continue;
                const double gamma = dot(a.col(p), a.col(q), rows);
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(a.col(p), a.col(q), rows, c, s);
                rotate(rot.col(p), rot.col(q), r, c, s);
                norms[p] = dot(a.col(p), a.col(p), rows);
                norms[q] = dot(a.col(q), a.col(q), rows);
            }
        converged = !rotated;
    }
    if (!converged) {
        auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
        std::ostringstream msg;
        msg << "thin_svd: no convergence after " << sweep << " sweeps on " << to_string(phi.shape())
            << " (sigma_max=" << std::sqrt(*hi) << ", sigma_min=" << std::sqrt(*lo)
            << ", condition=" << (*lo > 0 ? std::sqrt(*hi / *lo) : std::numeric_limits<double>::infinity()) << ")";
        throw SvdConvergenceError(msg.str());
    }

    std::vector<double> sigma(r);
    for (std::size_t j = 0; j < r; ++j) sigma[j] = std::sqrt(dot(a.col(j), a.col(j), rows));
    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    // left: singular vectors spanning the long side, right: the rotations.
    Columns left{rows, r, std::vector<double>(rows * r)};
    Columns right{r, r, std::vector<double>(r * r)};
    std::vector<double> sorted(r);
    std::vector<bool> missing(r, false);
    const double floor = sigma.empty() ? 0.0 : sigma[order[0]] * static_cast<double>(rows) * eps;
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t j = order[k];
        sorted[k] = sigma[j];
        std::copy(rot.col(j), rot.col(j) + r, right.col(k));
        if (sigma[j] > floor && sigma[j] > 0.0) {
            for (std::size_t i = 0; i < rows; ++i) left.col(k)[i] = a.col(j)[i] / sigma[j];
        } else {
            missing[k] = true;
        }
    }
    complete_basis(left, missing);

    // Map back: u spans the rows of phi, v its columns.
    Columns& u_cols = transposed ? right : left;
    Columns& v_cols = transposed ? left : right;
    for (std::size_t k = 0; k < r; ++k) {
        const double* vk = v_cols.col(k);
        std::size_t best = 0;
        for (std::size_t i = 1; i < d; ++i)
            if (std::abs(vk[i]) > std::abs(vk[best])) best = i;
        if (vk[best] < 0.0) {
            for (std::size_t i = 0; i < d; ++i) v_cols.col(k)[i] = -v_cols.col(k)[i];
            for (std::size_t i = 0; i < n; ++i) u_cols.col(k)[i] = -u_cols.col(k)[i];
        }
    }

    SvdFactors<T> out{Tensor<T>({n, r}), std::vector<T>(r), Tensor<T>({d, r})};
    for (std::size_t k = 0; k < r; ++k) {
        out.sigma[k] = static_cast<T>(sorted[k]);
        for (std::size_t i = 0; i < n; ++i) out.u[i * r + k] = static_cast<T>(u_cols.col(k)[i]);
        for (std::size_t i = 0; i < d; ++i) out.v[i * r + k] = static_cast<T>(v_cols.col(k)[i]);
    }
    return out;
}

template SvdFactors<float> thin_svd(const Tensor<float>&);
template SvdFactors<double> thin_svd(const Tensor<double>&);

}  // namespace dla
