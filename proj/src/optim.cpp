#include "dla/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dla {

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
    if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(std::string_view name) {
    for (auto& [key, tensor] : entries_)
        if (key == name) return tensor;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(std::string_view name) const {
    for (const auto& [key, tensor] : entries_)
        if (key == name) return tensor;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

template <typename T>
ParameterSet<T> ParameterSet<T>::without(std::string_view name) const {
    ParameterSet<T> out;
    for (const auto& entry : entries_)
        if (entry.first != name) out.entries_.push_back(entry);
    return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& entry : entries_) entry.second.zero_grad();
}

std::string_view to_string(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

template <typename T>
void optimizer_step(ParameterSet<T>& params, OptimizerState<T>& state) {
    for (const auto& [name, tensor] : params)
        if (!tensor.has_grad()) throw std::logic_error("optimizer_step: parameter '" + name + "' has no gradient");

    ++state.step;
    if (state.kind == OptimizerKind::sgd) {
        for (auto& [name, tensor] : params) {
            auto value = tensor.data();
            auto grad = tensor.grad();
            for (std::size_t i = 0; i < value.size(); ++i) value[i] -= state.step_size * grad[i];
        }
    } else {
        if (state.first_moment.empty()) {
            for (const auto& [name, tensor] : params) {
                state.first_moment.emplace_back(tensor.size(), T(0));
                state.second_moment.emplace_back(tensor.size(), T(0));
            }
        }
        if (state.first_moment.size() != params.size())
            throw std::logic_error("optimizer_step: state tracks " + std::to_string(state.first_moment.size()) +
                                   " parameters, set has " + std::to_string(params.size()));
        const auto t = static_cast<T>(state.step);
        const T correction1 = T(1) - std::pow(state.beta1, t);
        const T correction2 = T(1) - std::pow(state.beta2, t);
        std::size_t index = 0;
        for (auto& [name, tensor] : params) {
            auto value = tensor.data();
            auto grad = tensor.grad();
            auto& m = state.first_moment[index];
            auto& v = state.second_moment[index];
            if (m.size() != value.size())
                throw std::logic_error("optimizer_step: moment shape mismatch for '" + name + "'");
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * grad[i];
                v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * grad[i] * grad[i];
                const T m_hat = m[i] / correction1;
                const T v_hat = v[i] / correction2;
                value[i] -= state.step_size * m_hat / (std::sqrt(v_hat) + state.epsilon);
            }
            ++index;
        }
    }
    params.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void optimizer_step(ParameterSet<float>&, OptimizerState<float>&);
template void optimizer_step(ParameterSet<double>&, OptimizerState<double>&);

}  // namespace dla
