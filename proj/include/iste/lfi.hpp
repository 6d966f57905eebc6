#pragma once

#include <array>
#include <vector>

#include "iste/layers.hpp"

namespace iste {

inline constexpr std::size_t kWindowSources = 10;  // self, pooled, 8 neighbours

/// The 3x3 window around one feature vector (replicate padding).
template <typename T>
struct WindowSet {
    std::vector<T> center;
    std::array<std::vector<T>, 8> neighbors;  // row-major around the center
    std::vector<T> pooled;                    // mean of all 9 window vectors
};

/// Row-major flat indices of the 8 ring neighbours of every position.
std::vector<std::array<std::size_t, 8>> window_neighbors(std::size_t h, std::size_t w);

template <typename T>
WindowSet<T> build_window(const Tensor<T>& features, std::size_t y, std::size_t x);

template <typename T>
std::vector<WindowSet<T>> build_windows(const Tensor<T>& features);

/// Projection layout. Shared: one key/value pair for all 10 sources.
/// Grouped: separate key/value projections for self, pooled and ring.
template <typename T>
struct LfiParams {
    nn::LinearLayer<T> query;
    std::vector<nn::LinearLayer<T>> keys;    // 1 (shared) or 3 (self, pooled, ring)
    std::vector<nn::LinearLayer<T>> values;  // same grouping as keys
    std::size_t attention_dim = 64;

    static LfiParams create(nn::ParamStore<T>& params, std::size_t channels, std::size_t attention_dim, bool grouped);
    static LfiParams bind(const nn::ParamStore<T>& params);
};

template <typename T>
struct LfiOutput {
    nn::Var<T> features;  // (h, w, C)
    nn::Var<T> weights;   // (h*w, 10): self, pooled, ring in row-major order
};

/// Scaled dot-product attention of each position over its window sources,
/// softmax over q.k / sqrt(d). Output has the input's shape.
template <typename T>
LfiOutput<T> lfi_attend(const nn::Var<T>& features, const LfiParams<T>& params);

}  // namespace iste
