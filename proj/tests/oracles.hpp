#pragma once

// Brute-force reference implementations shared by unit and acceptance tests.
// Each one follows the definition directly with plain loops in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "iste/image.hpp"
#include "iste/layers.hpp"
#include "iste/tensor.hpp"

namespace iste::oracle {

inline std::ptrdiff_t pad_index(std::ptrdiff_t i, std::ptrdiff_t n, nn::Padding p) {
    if (i >= 0 && i < n) return i;
    if (p == nn::Padding::Zero) return -1;
    if (p == nn::Padding::Replicate) return i < 0 ? 0 : n - 1;
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Same-size convolution; x (H,W,Cin), w (k,k,Cin,Cout), b (Cout).
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, nn::Padding p) {
    const auto H = static_cast<std::ptrdiff_t>(x.dim(0)), W = static_cast<std::ptrdiff_t>(x.dim(1));
    const std::size_t cin = x.dim(2), cout = w.dim(3);
    const auto k = static_cast<std::ptrdiff_t>(w.dim(0)), r = k / 2;
    Tensor<double> out({x.dim(0), x.dim(1), cout});
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t xx = 0; xx < W; ++xx)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = b[o];
                for (std::ptrdiff_t dy = 0; dy < k; ++dy)
                    for (std::ptrdiff_t dx = 0; dx < k; ++dx) {
                        const auto sy = pad_index(y + dy - r, H, p), sx = pad_index(xx + dx - r, W, p);
                        if (sy < 0 || sx < 0) continue;
                        for (std::size_t c = 0; c < cin; ++c) {
                            acc += x.at(sy, sx, c) * w[((dy * k + dx) * cin + c) * cout + o];
                        }
                    }
                out.at(y, xx, o) = acc;
            }
    return out;
}

inline std::vector<double> affine(const std::vector<double>& x, const nn::LinearLayer<double>& l) {
    const auto& w = l.weight.value();
    std::vector<double> out(w.dim(1));
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = l.bias.value()[o];
        for (std::size_t i = 0; i < x.size(); ++i) out[o] += x[i] * w.at(i, o);
    }
    return out;
}

// Attention sources at (y, x): the position itself, the mean of its 3x3
// window, then the 8 neighbours in row-major order, borders replicated.
inline std::vector<std::vector<double>> window_sources(const Tensor<double>& f, std::size_t y, std::size_t x) {
    const auto h = static_cast<std::ptrdiff_t>(f.dim(0)), w = static_cast<std::ptrdiff_t>(f.dim(1));
    const std::size_t c = f.dim(2);
    auto at = [&](std::ptrdiff_t r, std::ptrdiff_t q) {
        r = std::clamp<std::ptrdiff_t>(r, 0, h - 1);
        q = std::clamp<std::ptrdiff_t>(q, 0, w - 1);
        return std::vector<double>(f.data() + (r * w + q) * static_cast<std::ptrdiff_t>(c),
                                   f.data() + (r * w + q + 1) * static_cast<std::ptrdiff_t>(c));
    };
    const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
    std::vector<std::vector<double>> src{at(yy, xx), std::vector<double>(c, 0.0)};
    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
            const auto v = at(yy + dy, xx + dx);
            for (std::size_t k = 0; k < c; ++k) src[1][k] += v[k] / 9.0;
            if (dy != 0 || dx != 0) src.push_back(v);
        }
    return src;
}

// Softmax attention of one query over `sources`; keys and values of source i
// come from key_of(i) / value_of(i). Returns the weights and the mixed value.
struct Attention {
    std::vector<double> weights;
    std::vector<double> value;
};

inline Attention attend(const std::vector<double>& q, const std::vector<std::vector<double>>& sources,
                        const std::function<const nn::LinearLayer<double>&(std::size_t)>& key_of,
                        const std::function<const nn::LinearLayer<double>&(std::size_t)>& value_of) {
    const std::size_t n = sources.size();
    std::vector<double> logit(n);
    std::vector<std::vector<double>> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = affine(sources[i], key_of(i));
        vals[i] = affine(sources[i], value_of(i));
        double d = 0;
        for (std::size_t a = 0; a < q.size(); ++a) d += q[a] * k[a];
        logit[i] = d / std::sqrt(static_cast<double>(q.size()));
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0;
    for (auto& l : logit) z += (l = std::exp(l - mx));
    Attention out;
    out.value.assign(vals[0].size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.weights.push_back(logit[i] / z);
        for (std::size_t c = 0; c < out.value.size(); ++c) out.value[c] += logit[i] / z * vals[i][c];
    }
    return out;
}

inline double cosine(const double* a, const double* b, std::size_t d) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < d; ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    return ab / (std::max(std::sqrt(aa), 1e-8) * std::max(std::sqrt(bb), 1e-8));
}

// First index of the row maximum.
inline std::size_t argmax_row(const Tensor<double>& r, std::size_t i) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < r.dim(1); ++j)
        if (r.at(i, j) > r.at(i, best)) best = j;
    return best;
}

// Bilinear interpolation coefficient of LR center (row, col) for a query at
// normalized (qy, qx) on an h x w grid of pixel centers, clamped to the grid.
inline double bilinear_coefficient(double qy, double qx, std::size_t h, std::size_t w, std::size_t row,
                                   std::size_t col) {
    auto axis = [](double q, std::size_t n, std::size_t idx) {
        if (n == 1) return idx == 0 ? 1.0 : 0.0;
        const double u = std::clamp((q + 1.0) * static_cast<double>(n) / 2.0 - 0.5, 0.0, static_cast<double>(n - 1));
        const auto i0 = std::min(static_cast<std::size_t>(std::floor(u)), n - 2);
        const double t = u - static_cast<double>(i0);
        if (idx == i0) return 1.0 - t;
        if (idx == i0 + 1) return t;
        return 0.0;
    };
    return axis(qy, h, row) * axis(qx, w, col);
}

// 1-D resize: pixel-center aligned cubic (a = -0.5), kernel widened by the
// shrink factor, normalised weights, replicated borders.
inline std::vector<double> resize_axis(const std::vector<double>& in, std::size_t out_n) {
    const double s = static_cast<double>(in.size()) / static_cast<double>(out_n);
    const double support = s > 1 ? s : 1.0;
    auto cubic = [](double t) {
        t = std::abs(t);
        if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
        if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
        return 0.0;
    };
    std::vector<double> out(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
        const double center = (static_cast<double>(o) + 0.5) * s - 0.5;
        double acc = 0, wsum = 0;
        for (long i = static_cast<long>(std::floor(center - 2 * support)) - 1;
             i <= static_cast<long>(center + 2 * support) + 1; ++i) {
            const double wgt = cubic((static_cast<double>(i) - center) / support);
            if (wgt == 0) continue;
            const long j = std::clamp<long>(i, 0, static_cast<long>(in.size()) - 1);
            acc += wgt * in[static_cast<std::size_t>(j)];
            wsum += wgt;
        }
        out[o] = acc / wsum;
    }
    return out;
}

// Separable 2-D application of a 1-D operator to one channel.
inline std::vector<double> apply_2d(const std::vector<double>& img, std::size_t h, std::size_t w, std::size_t oh,
                                    std::size_t ow,
                                    const std::function<std::vector<double>(const std::vector<double>&, std::size_t)>& op) {
    std::vector<double> mid(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y) {
        const auto r = op(std::vector<double>(img.begin() + static_cast<long>(y * w), img.begin() + static_cast<long>((y + 1) * w)), ow);
        std::copy(r.begin(), r.end(), mid.begin() + static_cast<long>(y * ow));
    }
    for (std::size_t x = 0; x < ow; ++x) {
        std::vector<double> col(h);
        for (std::size_t y = 0; y < h; ++y) col[y] = mid[y * ow + x];
        const auto r = op(col, oh);
        for (std::size_t y = 0; y < oh; ++y) out[y * ow + x] = r[y];
    }
    return out;
}

// Largest absolute difference between resize_bicubic-style output and the
// separable oracle, over all channels.
inline double resize_error(const Image& in, const Image& out) {
    const std::size_t h = in.dim(0), w = in.dim(1), oh = out.dim(0), ow = out.dim(1);
    double worst = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> ch(h * w);
        for (std::size_t i = 0; i < h * w; ++i) ch[i] = in[i * 3 + c];
        const auto ref = apply_2d(ch, h, w, oh, ow, resize_axis);
        for (std::size_t i = 0; i < oh * ow; ++i) worst = std::max(worst, std::abs(ref[i] - out[i * 3 + c]));
    }
    return worst;
}

// Direct sliding-window SSIM on luma: 11x11 Gaussian window (sigma 1.5),
// valid positions only, C1 = 0.01^2, C2 = 0.03^2.
inline double ssim(const Image& a, const Image& b) {
    const std::size_t h = a.dim(0), w = a.dim(1), win = 11;
    auto y = [](const Image& im, std::size_t r, std::size_t c) {
        return 0.299 * im.at(r, c, 0) + 0.587 * im.at(r, c, 1) + 0.114 * im.at(r, c, 2);
    };
    double g[11][11], gs = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
    double total = 0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + win <= h; ++r)
        for (std::size_t c = 0; c + win <= w; ++c) {
            double ma = 0, mb = 0;
            for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                    ma += g[i][j] / gs * y(a, r + i, c + j);
                    mb += g[i][j] / gs * y(b, r + i, c + j);
                }
            double va = 0, vb = 0, cov = 0;
            for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                    const double da = y(a, r + i, c + j) - ma, db = y(b, r + i, c + j) - mb;
                    va += g[i][j] / gs * da * da;
                    vb += g[i][j] / gs * db * db;
                    cov += g[i][j] / gs * da * db;
                }
            const double c1 = 1e-4, c2 = 9e-4;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace iste::oracle
