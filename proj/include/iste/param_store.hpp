#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "iste/autograd.hpp"

namespace iste::nn {

/// Named parameters in insertion order, each a gradient-carrying leaf.
template <typename T>
class ParamStore {
   public:
    explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed), rng_(rng_seed) {}

    Var<T> add(const std::string& name, Tensor<T> value);
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Var<T> add_fan_in(const std::string& name, Shape shape, std::size_t fan_in);
    Var<T> add_uniform(const std::string& name, Shape shape, T bound);
    Var<T> add_zeros(const std::string& name, Shape shape);

    const Var<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Total scalar count, optionally restricted to names starting with `prefix`.
    std::size_t count(const std::string& prefix = "") const;

    void zero_grad();
    std::uint64_t rng_seed() const { return rng_seed_; }
    std::mt19937_64& rng() { return rng_; }

    /// Same names, shapes and values in another precision (gradients dropped).
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out(rng_seed_);
        for (const auto& [name, var] : entries_) out.add(name, var.value().template cast<U>());
        return out;
    }

   private:
    std::uint64_t rng_seed_;
    std::mt19937_64 rng_;
    std::vector<std::pair<std::string, Var<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
struct AdamState {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::uint64_t step = 0;
    std::map<std::string, Tensor<T>> first_moment;
    std::map<std::string, Tensor<T>> second_moment;
};

/// Bias-corrected Adam update over every parameter holding a gradient,
/// then zeroes all gradients.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state);

}  // namespace iste::nn
