#include "dla/spectral.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include <Eigen/Core>
#include <spdlog/spdlog.h>

#include "dla/ops.hpp"
#include "dla/record.hpp"

namespace dla {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

std::atomic<std::uint64_t> clamp_events{0};

void report_clamp(std::size_t pairs, double min_gap) {
    const auto count = ++clamp_events;
    // 1, 2, 4, 8, ... so long runs do not flood the log.
    if ((count & (count - 1)) == 0)
        spdlog::warn("spectral full-mode backward: degenerate spectrum (min relative gap {:.3e}), clamped {} "
                     "denominator pair(s) [occurrence {}]",
                     min_gap, pairs, count);
}

}  // namespace

std::string_view to_string(GradientMode mode) {
    return mode == GradientMode::projected ? "projected" : "full";
}

GradientMode parse_gradient_mode(std::string_view text) {
    if (text == "projected") return GradientMode::projected;
    if (text == "full") return GradientMode::full;
    throw std::invalid_argument("unknown gradient mode '" + std::string(text) + "' (expected projected or full)");
}

template <typename T>
Tensor<T> AlignmentGate<T>::k() const {
    return sigmoid(k_hat);
}

template <typename T>
Tensor<T> gate_weights(const Tensor<T>& k, T beta, std::size_t r) {
    if (r == 0) throw std::invalid_argument("gate_weights: r must be >= 1");
    if (!(beta > T(0))) throw std::invalid_argument("gate_weights: beta must be > 0");
    if (k.size() != 1) throw std::invalid_argument("gate_weights: k must be a scalar, got " + to_string(k.shape()));
    const T centre = k[0] * static_cast<T>(r);
    Tensor<T> w({r});
    for (std::size_t i = 0; i < r; ++i) {
        const T z = -beta * (static_cast<T>(i + 1) - centre);
        w[i] = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    }
    if (auto* tape = detail::recording({&k})) {
        detail::attach(tape, "gate_weights", {&k}, w, [ki = k.impl(), wi = w.impl(), beta, r] {
            auto gk = detail::grad_sink(ki);
            T acc = 0;
            for (std::size_t i = 0; i < r; ++i) {
                const T wv = wi->data[i];
                acc += wi->grad[i] * wv * (T(1) - wv);
            }
            gk[0] += acc * beta * static_cast<T>(r);
        });
    }
    return w;
}

template <typename T>
Tensor<T> gate_weights(const AlignmentGate<T>& gate, std::size_t r) {
    return gate_weights(gate.k(), gate.beta, r);
}

template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& phi, const Tensor<T>& weights, GradientMode mode) {
    if (phi.rank() != 2)
        throw std::invalid_argument("spectral_reweight: expected a matrix, got " + to_string(phi.shape()));
    const std::size_t n = phi.dim(0), d = phi.dim(1);
    auto svd = std::make_shared<SvdFactors<T>>(thin_svd(phi));
    const std::size_t r = svd->rank();
    if (weights.rank() != 1 || weights.dim(0) != r)
        throw std::invalid_argument("spectral_reweight: weights " + to_string(weights.shape()) + " for rank " +
                                    std::to_string(r));

    CMapMat<T> u(svd->u.data().data(), n, r);
    CMapMat<T> v(svd->v.data().data(), d, r);
    Vec<T> s(r);
    for (std::size_t j = 0; j < r; ++j) s[j] = weights[j] * svd->sigma[j];
    Tensor<T> out({n, d});
    MapMat<T>(out.data().data(), n, d).noalias() = (u * s.asDiagonal()) * v.transpose();

    if (auto* tape = detail::recording({&phi, &weights})) {
        detail::attach(tape, "spectral_reweight", {&phi, &weights}, out,
                       [pi = phi.impl(), wi = weights.impl(), oi = out.impl(), svd, n, d, r, mode] {
                           CMapMat<T> u(svd->u.data().data(), n, r);
                           CMapMat<T> v(svd->v.data().data(), d, r);
                           CMapMat<T> g(oi->grad.data(), n, d);
                           const RowMat<T> gv = g * v;
                           const RowMat<T> m = u.transpose() * gv;
                           const auto& sigma = svd->sigma;
                           const auto& w = wi->data;

                           if (auto gw = detail::grad_sink(wi); !gw.empty())
                               for (std::size_t j = 0; j < r; ++j) gw[j] += sigma[j] * m(j, j);

                           auto gp = detail::grad_sink(pi);
                           if (gp.empty()) return;
                           MapMat<T> dphi(gp.data(), n, d);
                           Vec<T> wv(r);
                           for (std::size_t j = 0; j < r; ++j) wv[j] = w[j];

                           if (mode == GradientMode::projected) {
                               dphi.noalias() += (gv * wv.asDiagonal()) * v.transpose();
                               return;
                           }

                           const T smax2 = r ? sigma[0] * sigma[0] : T(0);
                           const T clamp = static_cast<T>(kGapClamp) * smax2;
                           RowMat<T> core(r, r);
                           std::size_t clamped = 0;
                           double min_gap = std::numeric_limits<double>::infinity();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < r; ++j) {
                                   // w_j m_ij plus a part proportional to w_j - w_i, so the
                                   // clamp only touches pairs whose weights differ.
                                   core(i, j) = w[j] * m(i, j);
                                   if (w[j] == w[i]) continue;
                                   T denom = sigma[j] * sigma[j] - sigma[i] * sigma[i];
                                   if (smax2 > T(0))
                                       min_gap = std::min(min_gap, static_cast<double>(std::abs(denom) / smax2));
                                   if (std::abs(denom) < clamp) {
                                       denom = denom < T(0) ? -clamp : clamp;
                                       ++clamped;
                                   }
                                   if (denom != T(0))
                                       core(i, j) += (w[j] - w[i]) *
                                                     (m(i, j) * sigma[i] * sigma[i] + m(j, i) * sigma[i] * sigma[j]) /
                                                     denom;
                               }
                           if (clamped) report_clamp(clamped / 2, min_gap);

                           dphi.noalias() += (u * core) * v.transpose();
                           // Components of the gradient outside span(U) and span(V).
                           dphi.noalias() += ((gv - u * m) * wv.asDiagonal()) * v.transpose();
                           dphi.noalias() += (u * wv.asDiagonal()) * (u.transpose() * g - m * v.transpose());
                       });
    }
    return out;
}

template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& phi, const Tensor<T>& weights, FilterSide side, GradientMode mode) {
    return spectral_reweight(phi, side == FilterSide::top ? weights : one_minus(weights), mode);
}

template <typename T>
Tensor<T> spectral_filter(const Tensor<T>& phi, const AlignmentGate<T>& gate, FilterSide side, GradientMode mode) {
    if (phi.rank() != 2)
        throw std::invalid_argument("spectral_filter: expected a matrix, got " + to_string(phi.shape()));
    const std::size_t r = std::min(phi.dim(0), phi.dim(1));
    return spectral_filter(phi, gate_weights(gate, r), side, mode);
}

#define DLA_INSTANTIATE_SPECTRAL(T)                                                                   \
    template struct AlignmentGate<T>;                                                                 \
    template Tensor<T> gate_weights(const Tensor<T>&, T, std::size_t);                                \
    template Tensor<T> gate_weights(const AlignmentGate<T>&, std::size_t);                            \
    template Tensor<T> spectral_reweight(const Tensor<T>&, const Tensor<T>&, GradientMode);           \
    template Tensor<T> spectral_filter(const Tensor<T>&, const Tensor<T>&, FilterSide, GradientMode); \
    template Tensor<T> spectral_filter(const Tensor<T>&, const AlignmentGate<T>&, FilterSide, GradientMode);

DLA_INSTANTIATE_SPECTRAL(float)
DLA_INSTANTIATE_SPECTRAL(double)

}  // namespace dla
