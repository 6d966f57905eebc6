#pragma once

#include <vector>

#include "iste/layers.hpp"

namespace iste {

struct EncoderConfig {
    std::size_t channels = 64;
    std::size_t n_blocks = 4;
    std::size_t kernel = 3;
    bool operator==(const EncoderConfig&) const = default;
};

/// Residual convolutional feature extractor (EDSR body, no upsampler):
/// stem conv, n residual blocks of conv-relu-conv with identity skip,
/// a tail conv and a global skip from the stem.
template <typename T>
struct Encoder {
    nn::Conv2d<T> stem;
    std::vector<std::pair<nn::Conv2d<T>, nn::Conv2d<T>>> blocks;
    nn::Conv2d<T> tail;

    static Encoder create(nn::ParamStore<T>& params, const EncoderConfig& cfg);
    static Encoder bind(const nn::ParamStore<T>& params, const EncoderConfig& cfg);

    /// image: (h, w, 3) with h, w >= 8. Returns (h, w, channels).
    nn::Var<T> encode(const nn::Var<T>& image) const;
};

}  // namespace iste
