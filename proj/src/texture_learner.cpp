#include "iste/texture_learner.hpp"

#include <cmath>

namespace iste {

template <typename T>
TextureLearner<T> TextureLearner<T>::create(nn::ParamStore<T>& params, std::size_t in_channels,
                                            std::size_t texture_dim, std::size_t phase_hidden) {
    TextureLearner tl;
    tl.amp = nn::Conv2d<T>::create(params, "texture.amp", in_channels, texture_dim);
    tl.freq_x = nn::Conv2d<T>::create(params, "texture.freq_x", in_channels, texture_dim);
    tl.freq_y = nn::Conv2d<T>::create(params, "texture.freq_y", in_channels, texture_dim);
    tl.phase_net = nn::Mlp<T>::create(params, "texture.phase", {2, phase_hidden, texture_dim},
                                      {nn::Activation::Relu, nn::Activation::Sigmoid});
    return tl;
}

template <typename T>
TextureLearner<T> TextureLearner<T>::bind(const nn::ParamStore<T>& params) {
    TextureLearner tl;
    tl.amp = nn::Conv2d<T>::bind(params, "texture.amp");
    tl.freq_x = nn::Conv2d<T>::bind(params, "texture.freq_x");
    tl.freq_y = nn::Conv2d<T>::bind(params, "texture.freq_y");
    tl.phase_net = nn::Mlp<T>::bind(params, "texture.phase", {nn::Activation::Relu, nn::Activation::Sigmoid});
    return tl;
}

template <typename T>
TextureFieldMaps<T> TextureLearner<T>::maps(const nn::Var<T>& features) const {
    return {amp(features), freq_x(features), freq_y(features)};
}

template <typename T>
nn::Var<T> TextureLearner<T>::phase(Point2 cell) const {
    const nn::Var<T> input = nn::constant(Tensor<T>({1, 2}, {static_cast<T>(cell.x), static_cast<T>(cell.y)}));
    return nn::mlp_forward(input, phase_net);
}

template <typename T>
T texture_value(T amp, T freq_x, T freq_y, T dx, T dy, T phase) {
    return amp * std::sin(freq_x * dx + freq_y * dy + phase);
}

template <typename T>
nn::Var<T> texture_features(const TextureFieldMaps<T>& maps, const CoordSet& coords, const nn::Var<T>& phase) {
    const Shape& s = maps.amp.shape();
    if (s.size() != 3 || maps.freq_x.shape() != s || maps.freq_y.shape() != s) {
        throw ShapeError("texture_features: field maps must share an (h, w, D) shape");
    }
    if (s[0] != coords.lr_h || s[1] != coords.lr_w) {
        throw ShapeError("texture_features: coordinate set built for a different LR grid");
    }
    const std::size_t d = s[2], n = coords.size(), hw = s[0] * s[1];
    if (phase.numel() != d) throw ShapeError("texture_features: phase width mismatch");
    for (const Point2& p : coords.hr) {
        if (!(std::abs(p.y) <= 1.0 && std::abs(p.x) <= 1.0)) {
            throw RangeError("texture_features: coordinate outside the normalized [-1, 1] domain");
        }
    }
    Tensor<T> dx({n, 1}), dy({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 g = coords.local_grid_pixels(i);
        dy[i] = static_cast<T>(g.y);
        dx[i] = static_cast<T>(g.x);
    }
    auto sample = [&](const nn::Var<T>& map) { return nn::gather_rows(nn::reshape(map, {hw, d}), coords.nearest_index); };
    const nn::Var<T> amp = sample(maps.amp);
    nn::Var<T> arg = nn::add(nn::scale_rows(sample(maps.freq_x), nn::constant(std::move(dx))),
                             nn::scale_rows(sample(maps.freq_y), nn::constant(std::move(dy))));
    arg = nn::add_row(arg, phase);
    return nn::mul(amp, nn::sine(arg));
}

template struct TextureLearner<float>;
template struct TextureLearner<double>;
template float texture_value<float>(float, float, float, float, float, float);
template double texture_value<double>(double, double, double, double, double, double);
template nn::Var<float> texture_features<float>(const TextureFieldMaps<float>&, const CoordSet&, const nn::Var<float>&);
template nn::Var<double> texture_features<double>(const TextureFieldMaps<double>&, const CoordSet&,
                                                  const nn::Var<double>&);

}  // namespace iste
