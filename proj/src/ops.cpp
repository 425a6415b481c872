#include "dla/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "dla/record.hpp"

namespace dla {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
    if (a.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    to_string(a.shape()));
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    if (auto* tape = detail::recording({&a, &b})) {
        detail::attach(tape, "add", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
            for (auto sink : {detail::grad_sink(ai), detail::grad_sink(bi)})
                for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    if (auto* tape = detail::recording({&a, &b})) {
        detail::attach(tape, "sub", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
            auto ga = detail::grad_sink(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
            auto gb = detail::grad_sink(bi);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    if (auto* tape = detail::recording({&a, &b})) {
        detail::attach(tape, "mul", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
            auto ga = detail::grad_sink(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * bi->data[i];
            auto gb = detail::grad_sink(bi);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i] * ai->data[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    if (auto* tape = detail::recording({&a})) {
        detail::attach(tape, "scale", {&a}, out, [ai = a.impl(), oi = out.impl(), factor] {
            auto ga = detail::grad_sink(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * factor;
        });
    }
    return out;
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - a[i];
    if (auto* tape = detail::recording({&a})) {
        detail::attach(tape, "one_minus", {&a}, out, [ai = a.impl(), oi = out.impl()] {
            auto ga = detail::grad_sink(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                                    to_string(b.shape()));
    const auto n = a.dim(0), p = a.dim(1), q = b.dim(1);
    Tensor<T> out({n, q});
    MapMat<T>(out.data().data(), n, q).noalias() =
        CMapMat<T>(a.data().data(), n, p) * CMapMat<T>(b.data().data(), p, q);
    if (auto* tape = detail::recording({&a, &b})) {
        detail::attach(tape, "matmul", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n, p, q] {
            CMapMat<T> g(oi->grad.data(), n, q);
            if (auto ga = detail::grad_sink(ai); !ga.empty())
                MapMat<T>(ga.data(), n, p).noalias() += g * CMapMat<T>(bi->data.data(), p, q).transpose();
            if (auto gb = detail::grad_sink(bi); !gb.empty())
                MapMat<T>(gb.data(), p, q).noalias() += CMapMat<T>(ai->data.data(), n, p).transpose() * g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw std::invalid_argument("bias_add: bias " + to_string(bias.shape()) + " does not match axis 1 of " +
                                    to_string(x.shape()));
    const std::size_t outer = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.size() / (outer * channels);
    Tensor<T> out(x.shape());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) out[base + i] = x[base + i] + bias[c];
        }
    if (auto* tape = detail::recording({&x, &bias})) {
        detail::attach(tape, "bias_add", {&x, &bias}, out,
                       [xi = x.impl(), bi = bias.impl(), oi = out.impl(), outer, channels, inner] {
                           auto gx = detail::grad_sink(xi);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
                           auto gb = detail::grad_sink(bi);
                           if (gb.empty()) return;
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t c = 0; c < channels; ++c) {
                                   const std::size_t base = (o * channels + c) * inner;
                                   T acc = 0;
                                   for (std::size_t i = 0; i < inner; ++i) acc += oi->grad[base + i];
                                   gb[c] += acc;
                               }
                       });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "relu", {&x}, out, [xi = x.impl(), oi = out.impl()] {
            auto gx = detail::grad_sink(xi);
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xi->data[i] > T(0)) gx[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x[i]);
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "sigmoid", {&x}, out, [xi = x.impl(), oi = out.impl()] {
            auto gx = detail::grad_sink(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const T s = oi->data[i];
                gx[i] += oi->grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
    require_rank("max_pool2d", x, 4);
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw std::invalid_argument("max_pool2d: input too small " + to_string(x.shape()));
    Tensor<T> out({b, c, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t plane = 0; plane < b * c; ++plane) {
        const std::size_t in_base = plane * h * w, out_base = plane * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = in_base + (2 * i) * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = in_base + (2 * i + di) * w + 2 * j + dj;
                        if (x[idx] > x[best]) best = idx;
                    }
                out[out_base + i * ow + j] = x[best];
                argmax[out_base + i * ow + j] = best;
            }
    }
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "max_pool2d", {&x}, out, [xi = x.impl(), oi = out.impl(), argmax = std::move(argmax)] {
            auto gx = detail::grad_sink(xi);
            for (std::size_t k = 0; k < argmax.size(); ++k) gx[argmax[k]] += oi->grad[k];
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
    require_rank("conv2d", input, 4);
    require_rank("conv2d", kernel, 4);
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (kernel.dim(1) != input.dim(1))
        throw std::invalid_argument("conv2d: kernel " + to_string(kernel.shape()) + " does not match input channels of " +
                                    to_string(input.shape()));
    const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw std::invalid_argument("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                                    to_string(input.shape()));
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
    const std::size_t patch = c * kh * kw;
    const std::size_t rows = b * oh * ow;

    // One row per output position, one column per (channel, ky, kx).
    auto cols = std::make_shared<std::vector<T>>(rows * patch, T(0));
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                T* row = cols->data() + ((n * oh + y) * ow + x) * patch;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            row[(ch * kh + ky) * kw + kx] = input[((n * c + ch) * h + iy) * w + ix];
                        }
                    }
            }

    RowMat<T> prod = CMapMat<T>(cols->data(), rows, patch) * CMapMat<T>(kernel.data().data(), o, patch).transpose();
    Tensor<T> out({b, o, oh, ow});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t pos = 0; pos < oh * ow; ++pos) out[(n * o + oc) * oh * ow + pos] = prod(n * oh * ow + pos, oc);

    if (auto* tape = detail::recording({&input, &kernel})) {
        detail::attach(tape, "conv2d", {&input, &kernel}, out,
                       [ii = input.impl(), ki = kernel.impl(), oi = out.impl(), cols, b, c, h, w, o, kh, kw, oh, ow,
                        stride, padding, patch, rows] {
                           RowMat<T> g(rows, o);
                           for (std::size_t n = 0; n < b; ++n)
                               for (std::size_t oc = 0; oc < o; ++oc)
                                   for (std::size_t pos = 0; pos < oh * ow; ++pos)
                                       g(n * oh * ow + pos, oc) = oi->grad[(n * o + oc) * oh * ow + pos];
                           if (auto gk = detail::grad_sink(ki); !gk.empty())
                               MapMat<T>(gk.data(), o, patch).noalias() +=
                                   g.transpose() * CMapMat<T>(cols->data(), rows, patch);
                           auto gi = detail::grad_sink(ii);
                           if (gi.empty()) return;
                           RowMat<T> dcols = g * CMapMat<T>(ki->data.data(), o, patch);
                           for (std::size_t n = 0; n < b; ++n)
                               for (std::size_t y = 0; y < oh; ++y)
                                   for (std::size_t x = 0; x < ow; ++x) {
                                       const T* row = dcols.data() + ((n * oh + y) * ow + x) * patch;
                                       for (std::size_t ch = 0; ch < c; ++ch)
                                           for (std::size_t ky = 0; ky < kh; ++ky) {
                                               const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                                               static_cast<std::ptrdiff_t>(padding);
                                               if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                               for (std::size_t kx = 0; kx < kw; ++kx) {
                                                   const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                                                   static_cast<std::ptrdiff_t>(padding);
                                                   if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                                   gi[((n * c + ch) * h + iy) * w + ix] += row[(ch * kh + ky) * kw + kx];
                                               }
                                           }
                                   }
                       });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size())
        throw std::invalid_argument("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "reshape", {&x}, out, [xi = x.impl(), oi = out.impl()] {
            auto gx = detail::grad_sink(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
    if (x.rank() < 1) throw std::invalid_argument("flatten: scalar input");
    return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "sum", {&x}, out, [xi = x.impl(), oi = out.impl()] {
            auto gx = detail::grad_sink(xi);
            for (auto& g : gx) g += oi->grad[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> squared_norm(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v * v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (auto* tape = detail::recording({&x})) {
        detail::attach(tape, "squared_norm", {&x}, out, [xi = x.impl(), oi = out.impl()] {
            auto gx = detail::grad_sink(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * xi->data[i] * oi->grad[0];
        });
    }
    return out;
}

namespace {
template <typename T>
void softmax_rows(std::span<const T> logits, std::span<T> probs, std::size_t n, std::size_t m) {
    for (std::size_t r = 0; r < n; ++r) {
        const T* z = logits.data() + r * m;
        T* p = probs.data() + r * m;
        const T zmax = *std::max_element(z, z + m);
        T total = 0;
        for (std::size_t j = 0; j < m; ++j) total += (p[j] = std::exp(z[j] - zmax));
        for (std::size_t j = 0; j < m; ++j) p[j] /= total;
    }
}
}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    require_rank("softmax", logits, 2);
    const std::size_t n = logits.dim(0), m = logits.dim(1);
    Tensor<T> out(logits.shape());
    softmax_rows<T>(logits.data(), out.data(), n, m);
    if (auto* tape = detail::recording({&logits})) {
        detail::attach(tape, "softmax", {&logits}, out, [li = logits.impl(), oi = out.impl(), n, m] {
            auto gl = detail::grad_sink(li);
            for (std::size_t r = 0; r < n; ++r) {
                const T* p = oi->data.data() + r * m;
                const T* g = oi->grad.data() + r * m;
                T dot = 0;
                for (std::size_t j = 0; j < m; ++j) dot += g[j] * p[j];
                for (std::size_t j = 0; j < m; ++j) gl[r * m + j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_rank("softmax_cross_entropy", logits, 2);
    const std::size_t n = logits.dim(0), m = logits.dim(1);
    if (labels.size() != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " rows");
    for (std::size_t r = 0; r < n; ++r)
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= m)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[r]) + " at row " +
                                        std::to_string(r) + " outside [0, " + std::to_string(m) + ")");
    Tensor<T> probs(logits.shape());
    T total = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const T* z = logits.data().data() + r * m;
        T* p = probs.data().data() + r * m;
        const T zmax = *std::max_element(z, z + m);
        T denom = 0;
        for (std::size_t j = 0; j < m; ++j) denom += (p[j] = std::exp(z[j] - zmax));
        for (std::size_t j = 0; j < m; ++j) p[j] /= denom;
        total += std::log(denom) + zmax - z[labels[r]];
    }
    CrossEntropy<T> result{Tensor<T>::scalar(total / static_cast<T>(n)), probs};
    if (auto* tape = detail::recording({&logits})) {
        std::vector<int> kept(labels.begin(), labels.end());
        detail::attach(tape, "softmax_cross_entropy", {&logits}, result.loss,
                       [li = logits.impl(), pi = probs.impl(), oi = result.loss.impl(), kept = std::move(kept), n, m] {
                           auto gl = detail::grad_sink(li);
                           const T g = oi->grad[0] / static_cast<T>(n);
                           for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t j = 0; j < m; ++j) {
                                   const T target = static_cast<int>(j) == kept[r] ? T(1) : T(0);
                                   gl[r * m + j] += g * (pi->data[r * m + j] - target);
                               }
                       });
    }
    return result;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
    Tensor<T> out({labels.size(), classes});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[r]) + " out of range");
        out[r * classes + static_cast<std::size_t>(labels[r])] = T(1);
    }
    return out;
}

#define DLA_INSTANTIATE_OPS(T)                                                                      \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> scale(const Tensor<T>&, T);                                                   \
    template Tensor<T> one_minus(const Tensor<T>&);                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> bias_add(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> relu(const Tensor<T>&);                                                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
    template Tensor<T> max_pool2d(const Tensor<T>&);                                                 \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
    template Tensor<T> flatten(const Tensor<T>&);                                                    \
    template Tensor<T> sum(const Tensor<T>&);                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                       \
    template Tensor<T> squared_norm(const Tensor<T>&);                                               \
    template Tensor<T> softmax(const Tensor<T>&);                                                    \
    template CrossEntropy<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);          \
    template Tensor<T> one_hot(std::span<const int>, std::size_t);

DLA_INSTANTIATE_OPS(float)
DLA_INSTANTIATE_OPS(double)

}  // namespace dla
