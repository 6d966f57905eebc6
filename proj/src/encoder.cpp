#include "iste/encoder.hpp"

#include <string>

namespace iste {

template <typename T>
Encoder<T> Encoder<T>::create(nn::ParamStore<T>& params, const EncoderConfig& cfg) {
    if (cfg.channels == 0) throw ConfigError("encoder: channels must be positive");
    Encoder e;
    e.stem = nn::Conv2d<T>::create(params, "encoder.stem", 3, cfg.channels, cfg.kernel);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string name = "encoder.block" + std::to_string(b);
        e.blocks.emplace_back(nn::Conv2d<T>::create(params, name + ".conv0", cfg.channels, cfg.channels, cfg.kernel),
                              nn::Conv2d<T>::create(params, name + ".conv1", cfg.channels, cfg.channels, cfg.kernel));
    }
    e.tail = nn::Conv2d<T>::create(params, "encoder.tail", cfg.channels, cfg.channels, cfg.kernel);
    return e;
}

template <typename T>
Encoder<T> Encoder<T>::bind(const nn::ParamStore<T>& params, const EncoderConfig& cfg) {
    Encoder e;
    e.stem = nn::Conv2d<T>::bind(params, "encoder.stem");
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string name = "encoder.block" + std::to_string(b);
        e.blocks.emplace_back(nn::Conv2d<T>::bind(params, name + ".conv0"),
                              nn::Conv2d<T>::bind(params, name + ".conv1"));
    }
    e.tail = nn::Conv2d<T>::bind(params, "encoder.tail");
    if (e.stem.weight.dim(3) != cfg.channels) throw ShapeError("encoder: checkpoint channel count differs from config");
    return e;
}

template <typename T>
nn::Var<T> Encoder<T>::encode(const nn::Var<T>& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[2] != 3) throw ShapeError("encode: expected an (h, w, 3) RGB image, got " + shape_str(s));
    if (s[0] < 8 || s[1] < 8) throw ShapeError("encode: image must be at least 8x8, got " + shape_str(s));
    const nn::Var<T> x = stem(image);
    nn::Var<T> res = x;
    for (const auto& [c0, c1] : blocks) res = nn::add(res, c1(nn::relu(c0(res))));
    return nn::add(x, tail(res));
}

template struct Encoder<float>;
template struct Encoder<double>;

}  // namespace iste
