#pragma once

#include "iste/coords.hpp"
#include "iste/layers.hpp"

namespace iste {

/// Amplitude and per-axis frequency maps, each (h, w, D).
template <typename T>
struct TextureFieldMaps {
    nn::Var<T> amp;
    nn::Var<T> freq_x;
    nn::Var<T> freq_y;
};

/// Three 3x3 convolutions for the field maps and a sigmoid MLP producing
/// the scale-conditioned phase from the HR cell size.
template <typename T>
struct TextureLearner {
    nn::Conv2d<T> amp;
    nn::Conv2d<T> freq_x;
    nn::Conv2d<T> freq_y;
    nn::Mlp<T> phase_net;

    static TextureLearner create(nn::ParamStore<T>& params, std::size_t in_channels, std::size_t texture_dim,
                                 std::size_t phase_hidden);
    static TextureLearner bind(const nn::ParamStore<T>& params);

    std::size_t texture_dim() const { return amp.weight.dim(3); }

    TextureFieldMaps<T> maps(const nn::Var<T>& features) const;

    /// cell: HR pixel size (y, x), as given to the phase network. Returns (1, D) in (0, 1).
    nn::Var<T> phase(Point2 cell) const;
};

/// amp * sin(freq_x * dx + freq_y * dy + phase) for one channel.
template <typename T>
T texture_value(T amp, T freq_x, T freq_y, T dx, T dy, T phase);

/// Per-coordinate texture features (N, D): field maps sampled at the
/// nearest LR pixel, local grid offsets in LR pixel units, shared phase.
template <typename T>
nn::Var<T> texture_features(const TextureFieldMaps<T>& maps, const CoordSet& coords, const nn::Var<T>& phase);

}  // namespace iste
