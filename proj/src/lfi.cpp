#include "iste/lfi.hpp"

#include <cmath>
#include <string>

namespace iste {

std::vector<std::array<std::size_t, 8>> window_neighbors(std::size_t h, std::size_t w) {
    std::vector<std::array<std::size_t, 8>> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    bool inside = true;
                    const std::size_t sy =
                        nn::pad_index(static_cast<std::ptrdiff_t>(y) + dy, h, nn::Padding::Replicate, inside);
                    const std::size_t sx =
                        nn::pad_index(static_cast<std::ptrdiff_t>(x) + dx, w, nn::Padding::Replicate, inside);
                    out[y * w + x][k++] = sy * w + sx;
                }
            }
        }
    }
    return out;
}

template <typename T>
WindowSet<T> build_window(const Tensor<T>& features, std::size_t y, std::size_t x) {
    if (features.rank() != 3) throw ShapeError("build_window: expected (h, w, C) features");
    const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
    if (y >= h || x >= w) throw RangeError("build_window: position outside the feature map");
    auto vec_at = [&](std::size_t idx) {
        return std::vector<T>(features.data() + idx * c, features.data() + (idx + 1) * c);
    };
    const auto ring = window_neighbors(h, w)[y * w + x];
    WindowSet<T> ws;
    ws.center = vec_at(y * w + x);
    ws.pooled = ws.center;
    for (std::size_t i = 0; i < 8; ++i) {
        ws.neighbors[i] = vec_at(ring[i]);
        for (std::size_t k = 0; k < c; ++k) ws.pooled[k] += ws.neighbors[i][k];
    }
    for (auto& v : ws.pooled) v /= T(9);
    return ws;
}

template <typename T>
std::vector<WindowSet<T>> build_windows(const Tensor<T>& features) {
    if (features.rank() != 3) throw ShapeError("build_windows: expected (h, w, C) features");
    std::vector<WindowSet<T>> out;
    out.reserve(features.dim(0) * features.dim(1));
    for (std::size_t y = 0; y < features.dim(0); ++y)
        for (std::size_t x = 0; x < features.dim(1); ++x) out.push_back(build_window(features, y, x));
    return out;
}

namespace {

template <typename T>
nn::LinearLayer<T> make_projection(nn::ParamStore<T>& params, const std::string& name, std::size_t din,
                                   std::size_t dout) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(din)));
    return {params.add_uniform(name + ".weight", {din, dout}, bound), params.add_zeros(name + ".bias", {dout})};
}

template <typename T>
nn::LinearLayer<T> bind_projection(const nn::ParamStore<T>& params, const std::string& name) {
    return {params.get(name + ".weight"), params.get(name + ".bias")};
}

template <typename T>
nn::Var<T> project(const nn::Var<T>& x, const nn::LinearLayer<T>& p) {
    return nn::linear(x, p.weight, p.bias);
}

const char* const kGroups[3] = {"self", "pooled", "ring"};

}  // namespace

template <typename T>
LfiParams<T> LfiParams<T>::create(nn::ParamStore<T>& params, std::size_t channels, std::size_t attention_dim,
                                  bool grouped) {
    if (attention_dim == 0) throw ConfigError("lfi: attention dimension must be positive");
    LfiParams p;
    p.attention_dim = attention_dim;
    p.query = make_projection(params, "lfi.query", channels, attention_dim);
    if (grouped) {
        for (const char* g : kGroups) p.keys.push_back(make_projection(params, std::string("lfi.key.") + g, channels, attention_dim));
        for (const char* g : kGroups) p.values.push_back(make_projection(params, std::string("lfi.value.") + g, channels, channels));
    } else {
        p.keys.push_back(make_projection(params, "lfi.key", channels, attention_dim));
        p.values.push_back(make_projection(params, "lfi.value", channels, channels));
    }
    return p;
}

template <typename T>
LfiParams<T> LfiParams<T>::bind(const nn::ParamStore<T>& params) {
    LfiParams p;
    p.query = bind_projection(params, "lfi.query");
    p.attention_dim = p.query.weight.dim(1);
    if (params.contains("lfi.key.weight")) {
        p.keys.push_back(bind_projection(params, "lfi.key"));
        p.values.push_back(bind_projection(params, "lfi.value"));
    } else {
        for (const char* g : kGroups) p.keys.push_back(bind_projection(params, std::string("lfi.key.") + g));
        for (const char* g : kGroups) p.values.push_back(bind_projection(params, std::string("lfi.value.") + g));
    }
    return p;
}

template <typename T>
LfiOutput<T> lfi_attend(const nn::Var<T>& features, const LfiParams<T>& params) {
    const Shape& s = features.shape();
    if (s.size() != 3) throw ShapeError("lfi_attend: expected (h, w, C) features, got " + shape_str(s));
    if (params.attention_dim == 0) throw ConfigError("lfi_attend: attention dimension must be positive");
    const std::size_t h = s[0], w = s[1], c = s[2], n = h * w;
    const auto ring = window_neighbors(h, w);
    std::array<std::vector<std::size_t>, 8> ring_idx;
    for (std::size_t i = 0; i < 8; ++i) {
        ring_idx[i].resize(n);
        for (std::size_t j = 0; j < n; ++j) ring_idx[i][j] = ring[j][i];
    }

    const nn::Var<T> flat = nn::reshape(features, {n, c});
    const nn::Var<T> q = project(flat, params.query);

    // Sources in order: self, pooled, ring 0..7.
    std::vector<nn::Var<T>> keys, values;
    auto window_mean = [&](const nn::Var<T>& x) {
        nn::Var<T> acc = x;
        for (std::size_t i = 0; i < 8; ++i) acc = nn::add(acc, nn::gather_rows(x, ring_idx[i]));
        return nn::scale(acc, T(1) / T(9));
    };
    auto sources = [&](const std::vector<nn::LinearLayer<T>>& proj, std::vector<nn::Var<T>>& out) {
        if (proj.size() == 1) {
            // Projection commutes with gathering and averaging.
            const nn::Var<T> all = project(flat, proj[0]);
            out.push_back(all);
            out.push_back(window_mean(all));
            for (std::size_t i = 0; i < 8; ++i) out.push_back(nn::gather_rows(all, ring_idx[i]));
        } else {
            out.push_back(project(flat, proj[0]));
            out.push_back(project(window_mean(flat), proj[1]));
            const nn::Var<T> ring_all = project(flat, proj[2]);
            for (std::size_t i = 0; i < 8; ++i) out.push_back(nn::gather_rows(ring_all, ring_idx[i]));
        }
    };
    sources(params.keys, keys);
    sources(params.values, values);

    const T inv_sqrt_d = T(1) / static_cast<T>(std::sqrt(static_cast<double>(params.attention_dim)));
    std::vector<nn::Var<T>> logits;
    for (const auto& k : keys) logits.push_back(nn::scale(nn::row_dot(q, k), inv_sqrt_d));
    const nn::Var<T> weights = nn::softmax_rows(nn::concat_cols(logits));

    nn::Var<T> out;
    for (std::size_t i = 0; i < kWindowSources; ++i) {
        const nn::Var<T> term = nn::scale_rows(values[i], nn::slice_cols(weights, i, i + 1));
        out = out ? nn::add(out, term) : term;
    }
    return {nn::reshape(out, {h, w, c}), weights};
}

template struct LfiParams<float>;
template struct LfiParams<double>;
template WindowSet<float> build_window<float>(const Tensor<float>&, std::size_t, std::size_t);
template WindowSet<double> build_window<double>(const Tensor<double>&, std::size_t, std::size_t);
template std::vector<WindowSet<float>> build_windows<float>(const Tensor<float>&);
template std::vector<WindowSet<double>> build_windows<double>(const Tensor<double>&);
template LfiOutput<float> lfi_attend<float>(const nn::Var<float>&, const LfiParams<float>&);
template LfiOutput<double> lfi_attend<double>(const nn::Var<double>&, const LfiParams<double>&);

}  // namespace iste
