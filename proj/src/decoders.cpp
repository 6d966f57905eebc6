#include "iste/decoders.hpp"

namespace iste {

template <typename T>
Tensor<T> decoder_geometry(const CoordSet& coords, int corner) {
    const std::size_t n = coords.size();
    const double sy = static_cast<double>(coords.lr_h) / 2.0, sx = static_cast<double>(coords.lr_w) / 2.0;
    const Point2 cell = coords.cell_pixels();
    Tensor<T> g({n, kDecoderGeometryInputs});
    for (std::size_t i = 0; i < n; ++i) {
        const EnsembleWeights ew = ensemble_weights(coords.hr[i], coords.lr_h, coords.lr_w);
        g.at(i, 0) = static_cast<T>(ew.offset[corner].y * sy);
        g.at(i, 1) = static_cast<T>(ew.offset[corner].x * sx);
        g.at(i, 2) = static_cast<T>(cell.y);
        g.at(i, 3) = static_cast<T>(cell.x);
    }
    return g;
}

Tensor<double> corner_weights(const CoordSet& coords) {
    Tensor<double> w({coords.size(), 4});
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const EnsembleWeights ew = ensemble_weights(coords.hr[i], coords.lr_h, coords.lr_w);
        for (int t = 0; t < 4; ++t) w.at(i, t) = ew.weight[t];
    }
    return w;
}

template <typename T>
nn::Var<T> lpd_decode(const nn::Var<T>& features, const CoordSet& coords, const nn::Mlp<T>& f_theta) {
    const std::size_t n = coords.size();
    if (features.shape().size() != 2 || features.dim(0) != n) {
        throw ShapeError("lpd_decode: features must be (N, D) aligned with the coordinates");
    }
    const std::size_t d = features.dim(1);
    if (f_theta.layers.empty() || f_theta.in_dim() != d + kDecoderGeometryInputs) {
        throw ShapeError("lpd_decode: decoder input width must be feature width + 4");
    }
    const Tensor<double> weights = corner_weights(coords);

    // The first affine layer splits into a feature part, shared by the four
    // terms, and a geometry part evaluated per corner.
    const auto& first = f_theta.layers.front();
    const nn::Var<T> w_feat = nn::slice_rows(first.weight, 0, d);
    const nn::Var<T> w_geom = nn::slice_rows(first.weight, d, d + kDecoderGeometryInputs);
    const nn::Var<T> base = nn::linear(features, w_feat, first.bias);
    std::vector<nn::Var<T>> hidden;
    for (int t = 0; t < 4; ++t) {
        const nn::Var<T> geom = nn::constant(decoder_geometry<T>(coords, t));
        hidden.push_back(nn::activate(nn::add(base, nn::linear(geom, w_geom, nn::Var<T>())), first.activation));
    }
    nn::Var<T> h = nn::concat_rows(hidden);
    for (std::size_t l = 1; l < f_theta.layers.size(); ++l) {
        const auto& layer = f_theta.layers[l];
        h = nn::activate(nn::linear(h, layer.weight, layer.bias), layer.activation);
    }
    nn::Var<T> out;
    for (int t = 0; t < 4; ++t) {
        Tensor<T> wt({n, 1});
        for (std::size_t i = 0; i < n; ++i) wt[i] = static_cast<T>(weights.at(i, t));
        const nn::Var<T> term = nn::scale_rows(nn::slice_rows(h, t * n, (t + 1) * n), nn::constant(std::move(wt)));
        out = out ? nn::add(out, term) : term;
    }
    return out;
}

template <typename T>
nn::Var<T> ltd_decode(const nn::Var<T>& texture, const nn::Mlp<T>& g_phi) {
    return nn::mlp_forward(texture, g_phi);
}

template Tensor<float> decoder_geometry<float>(const CoordSet&, int);
template Tensor<double> decoder_geometry<double>(const CoordSet&, int);
template nn::Var<float> lpd_decode<float>(const nn::Var<float>&, const CoordSet&, const nn::Mlp<float>&);
template nn::Var<double> lpd_decode<double>(const nn::Var<double>&, const CoordSet&, const nn::Mlp<double>&);
template nn::Var<float> ltd_decode<float>(const nn::Var<float>&, const nn::Mlp<float>&);
template nn::Var<double> ltd_decode<double>(const nn::Var<double>&, const nn::Mlp<double>&);

}  // namespace iste
