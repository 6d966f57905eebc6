#include "iste/param_store.hpp"

#include <cmath>

namespace iste::nn {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> value) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    Var<T> var(std::move(value), true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, var);
    return var;
}

template <typename T>
Var<T> ParamStore<T>::add_uniform(const std::string& name, Shape shape, T bound) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng_));
    return add(name, std::move(t));
}

template <typename T>
Var<T> ParamStore<T>::add_fan_in(const std::string& name, Shape shape, std::size_t fan_in) {
    return add_uniform(name, std::move(shape), static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))));
}

template <typename T>
Var<T> ParamStore<T>::add_zeros(const std::string& name, Shape shape) {
    return add(name, Tensor<T>(std::move(shape)));
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::count(const std::string& prefix) const {
    std::size_t total = 0;
    for (const auto& [name, var] : entries_) {
        if (name.compare(0, prefix.size(), prefix) == 0) total += var.numel();
    }
    return total;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& [name, var] : entries_) {
        Var<T> v = var;
        v.zero_grad();
    }
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state) {
    if (!(state.lr > T(0))) throw ConfigError("adam: learning rate must be positive");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T correction1 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const T correction2 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta2), t));
    for (const auto& [name, var] : params.entries()) {
        if (!var.has_grad()) continue;
        Var<T> param = var;
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.shape() != param.shape()) m = Tensor<T>(param.shape());
        if (v.shape() != param.shape()) v = Tensor<T>(param.shape());
        Tensor<T>& value = param.mutable_value();
        const Tensor<T>& g = param.grad();
        for (std::size_t i = 0; i < value.numel(); ++i) {
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
            const T m_hat = m[i] / correction1;
            const T v_hat = v[i] / correction2;
            value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
        check_finite(value, "adam update");
    }
    params.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_step<float>(ParamStore<float>&, AdamState<float>&);
template void adam_step<double>(ParamStore<double>&, AdamState<double>&);

}  // namespace iste::nn
