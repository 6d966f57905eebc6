#pragma once

#include <vector>

#include "iste/coords.hpp"
#include "iste/layers.hpp"

namespace iste {

inline constexpr double kNormEpsilon = 1e-8;
inline constexpr std::size_t kDefaultRetrievalBlock = 2304;  // 48 x 48

template <typename T>
struct RetrievalResult {
    std::vector<std::size_t> index;  // t_i = argmax_j r_ij, lowest index on ties
    std::vector<T> confidence;       // s_i = r_{i, t_i}
    Tensor<T> retrieved;             // a_i = v_{t_i}, (N, D); empty when not requested
};

/// Cosine similarity of every query row against every key row, (N, M).
/// Norms are clamped below at 1e-8.
template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& queries, const Tensor<T>& keys);

template <typename T>
RetrievalResult<T> retrieve(const Tensor<T>& similarity, const Tensor<T>& values);

template <typename T>
struct StfParams {
    nn::LinearLayer<T> query;  // pixel feature width -> texture width
    nn::Mlp<T> fusion;         // 2D -> D

    static StfParams create(nn::ParamStore<T>& params, std::size_t in_channels, std::size_t texture_dim,
                            std::size_t fusion_hidden, bool with_fusion);
    static StfParams bind(const nn::ParamStore<T>& params, bool with_fusion);
    bool has_fusion() const { return !fusion.layers.empty(); }
};

/// q + MLP(concat(q, a)) * s, with s held constant.
template <typename T>
nn::Var<T> fuse(const nn::Var<T>& queries, const nn::Var<T>& retrieved, const std::vector<T>& confidence,
                const nn::Mlp<T>& fusion);

/// Nearest-sampled pixel features projected to the texture width, (N, D).
template <typename T>
nn::Var<T> lift_queries(const nn::Var<T>& pixel_features, const CoordSet& coords, const StfParams<T>& params);

template <typename T>
struct StfOutput {
    nn::Var<T> features;           // (N, D)
    RetrievalResult<T> retrieval;  // indices are global positions in the coordinate order
};

/// Retrieval is restricted to consecutive blocks of `block` coordinates.
/// Gradients reach the queries, the gathered values and the fusion MLP;
/// the argmax and the confidence are treated as constants. A `fixed`
/// retrieval replaces the search (used to replay one for gradient checks).
template <typename T>
StfOutput<T> stf_forward(const nn::Var<T>& pixel_features, const nn::Var<T>& texture, const CoordSet& coords,
                         const StfParams<T>& params, std::size_t block = kDefaultRetrievalBlock,
                         const RetrievalResult<T>* fixed = nullptr);

}  // namespace iste
