#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iste/tensor.hpp"

namespace iste {

/// RGB image, (h, w, 3) floats in [0, 1].
using Image = Tensor<float>;

Image decode_png(const std::string& bytes);
Image load_png(const std::filesystem::path& path);
/// 8-bit RGB PNG; values are clamped and rounded to the nearest level.
std::string encode_png(const Image& image);
void save_png(const Image& image, const std::filesystem::path& path);

Image crop(const Image& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

/// Bicubic resampling (a = -0.5) of the LR rectangle [y0, y0+h) x [x0, x0+w),
/// given in pixel units of `image`, onto an out_h x out_w grid of pixel
/// centers. Borders replicate. When an axis shrinks, the kernel is widened
/// by the shrink factor so the result is antialiased.
Image resample_bicubic(const Image& image, double y0, double x0, double h, double w, std::size_t out_h,
                       std::size_t out_w);
Image resize_bicubic(const Image& image, std::size_t out_h, std::size_t out_w);

/// Bicubic kernel with a = -0.5.
double cubic_kernel(double t);

/// Normalized 1-D Gaussian taps, `size` odd.
std::vector<double> gaussian_taps(std::size_t size, double sigma);

/// Separable Gaussian blur with reflect (edge-exclusive) padding.
Image gaussian_blur(const Image& image, std::size_t size = 5, double sigma = 1.0);

/// Y = 0.299 R + 0.587 G + 0.114 B, (h, w).
Tensor<double> luma(const Image& image);

}  // namespace iste
