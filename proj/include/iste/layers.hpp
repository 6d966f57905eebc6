#pragma once

#include <string>
#include <vector>

#include "iste/param_store.hpp"

namespace iste::nn {

/// Parameter handles of one k x k convolution.
template <typename T>
struct Conv2d {
    Var<T> weight;  // (k, k, Cin, Cout)
    Var<T> bias;    // (Cout)
    Padding padding = Padding::Reflect;

    static Conv2d create(ParamStore<T>& params, const std::string& name, std::size_t cin, std::size_t cout,
                         std::size_t kernel = 3, Padding padding = Padding::Reflect);
    static Conv2d bind(const ParamStore<T>& params, const std::string& name, Padding padding = Padding::Reflect);
    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, padding); }
};

template <typename T>
struct LinearLayer {
    Var<T> weight;  // (Din, Dout)
    Var<T> bias;    // (Dout)
    Activation activation = Activation::None;
};

/// Multi-layer perceptron over the trailing dimension. `dims` lists layer
/// widths including input and output; `activations` has one entry per
/// affine layer. The first sine-activated layer gets the widened sinusoidal
/// init U(-30/Din, 30/Din); later sine layers U(-sqrt(6/Din), sqrt(6/Din)).
template <typename T>
struct Mlp {
    std::vector<LinearLayer<T>> layers;

    static Mlp create(ParamStore<T>& params, const std::string& name, const std::vector<std::size_t>& dims,
                      const std::vector<Activation>& activations);
    static Mlp bind(const ParamStore<T>& params, const std::string& name, const std::vector<Activation>& activations);

    std::size_t in_dim() const { return layers.front().weight.dim(0); }
    std::size_t out_dim() const { return layers.back().weight.dim(1); }
};

/// Applies every affine layer and its activation to x: (..., Din).
/// Leading dimensions are flattened into rows and restored on return.
template <typename T>
Var<T> mlp_forward(const Var<T>& x, const Mlp<T>& mlp);

/// Hidden layers use ReLU, the output layer has no activation.
std::vector<Activation> relu_hidden(std::size_t n_layers, Activation last = Activation::None);

}  // namespace iste::nn
