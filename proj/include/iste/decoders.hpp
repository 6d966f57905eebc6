#pragma once

#include "iste/coords.hpp"
#include "iste/layers.hpp"

namespace iste {

inline constexpr std::size_t kDecoderGeometryInputs = 4;  // offset (y, x), cell (y, x)

/// Decoder input for the term at corner t: feature | offset x_q - u_t | cell,
/// with offset and cell in LR pixel units.
template <typename T>
Tensor<T> decoder_geometry(const CoordSet& coords, int corner);

/// Per-query area weights of the four corner terms, (N, 4).
Tensor<double> corner_weights(const CoordSet& coords);

/// Area-weighted sum over the four corners of f_theta(feature, x_q - u_t, c).
/// The feature is the per-query vector, shared by all four terms.
template <typename T>
nn::Var<T> lpd_decode(const nn::Var<T>& features, const CoordSet& coords, const nn::Mlp<T>& f_theta);

/// g_phi(F_TL): the four-corner weighted form collapses to one evaluation
/// since the weights sum to one and the terms are identical.
template <typename T>
nn::Var<T> ltd_decode(const nn::Var<T>& texture, const nn::Mlp<T>& g_phi);

}  // namespace iste
