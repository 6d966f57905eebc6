#include "iste/layers.hpp"

#include <cmath>

namespace iste::nn {

template <typename T>
Conv2d<T> Conv2d<T>::create(ParamStore<T>& params, const std::string& name, std::size_t cin, std::size_t cout,
                            std::size_t kernel, Padding padding) {
    if (kernel % 2 == 0) throw ConfigError("conv kernel must be odd: " + name);
    Conv2d c;
    c.weight = params.add_fan_in(name + ".weight", {kernel, kernel, cin, cout}, kernel * kernel * cin);
    c.bias = params.add_zeros(name + ".bias", {cout});
    c.padding = padding;
    return c;
}

template <typename T>
Conv2d<T> Conv2d<T>::bind(const ParamStore<T>& params, const std::string& name, Padding padding) {
    return Conv2d{params.get(name + ".weight"), params.get(name + ".bias"), padding};
}

std::vector<Activation> relu_hidden(std::size_t n_layers, Activation last) {
    std::vector<Activation> acts(n_layers, Activation::Relu);
    if (!acts.empty()) acts.back() = last;
    return acts;
}

template <typename T>
Mlp<T> Mlp<T>::create(ParamStore<T>& params, const std::string& name, const std::vector<std::size_t>& dims,
                      const std::vector<Activation>& activations) {
    if (dims.size() < 2 || activations.size() != dims.size() - 1) {
        throw ConfigError("mlp " + name + ": need one activation per affine layer");
    }
    Mlp mlp;
    bool seen_sine = false;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const std::string prefix = name + "." + std::to_string(i);
        const std::size_t din = dims[i], dout = dims[i + 1];
        LinearLayer<T> layer;
        if (activations[i] == Activation::Sine) {
            const double bound = seen_sine ? std::sqrt(6.0 / static_cast<double>(din)) : 30.0 / static_cast<double>(din);
            seen_sine = true;
            layer.weight = params.add_uniform(prefix + ".weight", {din, dout}, static_cast<T>(bound));
        } else {
            layer.weight = params.add_fan_in(prefix + ".weight", {din, dout}, din);
        }
        layer.bias = params.add_zeros(prefix + ".bias", {dout});
        layer.activation = activations[i];
        mlp.layers.push_back(layer);
    }
    return mlp;
}

template <typename T>
Mlp<T> Mlp<T>::bind(const ParamStore<T>& params, const std::string& name, const std::vector<Activation>& activations) {
    Mlp mlp;
    for (std::size_t i = 0; i < activations.size(); ++i) {
        const std::string prefix = name + "." + std::to_string(i);
        mlp.layers.push_back({params.get(prefix + ".weight"), params.get(prefix + ".bias"), activations[i]});
    }
    for (std::size_t i = 1; i < mlp.layers.size(); ++i) {
        if (mlp.layers[i].weight.dim(0) != mlp.layers[i - 1].weight.dim(1)) {
            throw ShapeError("mlp " + name + ": layer " + std::to_string(i) + " input width does not chain");
        }
    }
    return mlp;
}

template <typename T>
Var<T> mlp_forward(const Var<T>& x, const Mlp<T>& mlp) {
    if (mlp.layers.empty()) return x;
    const Shape& in_shape = x.shape();
    if (in_shape.empty() || in_shape.back() != mlp.in_dim()) {
        throw ShapeError("mlp: input " + shape_str(in_shape) + " does not end in width " + std::to_string(mlp.in_dim()));
    }
    for (std::size_t i = 1; i < mlp.layers.size(); ++i) {
        if (mlp.layers[i].weight.dim(0) != mlp.layers[i - 1].weight.dim(1)) {
            throw ShapeError("mlp: layer " + std::to_string(i) + " input width does not chain");
        }
    }
    const std::size_t rows = x.numel() / in_shape.back();
    Var<T> h = in_shape.size() == 2 ? x : reshape(x, {rows, in_shape.back()});
    for (const auto& layer : mlp.layers) h = activate(linear(h, layer.weight, layer.bias), layer.activation);
    if (in_shape.size() == 2) return h;
    Shape out_shape = in_shape;
    out_shape.back() = mlp.out_dim();
    return reshape(h, out_shape);
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template Var<float> mlp_forward<float>(const Var<float>&, const Mlp<float>&);
template Var<double> mlp_forward<double>(const Var<double>&, const Mlp<double>&);

}  // namespace iste::nn
