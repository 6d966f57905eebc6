#include "iste/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>

namespace iste {

namespace {

struct PngRaw {
    std::uint32_t width = 0, height = 0;
    int bit_depth = 8;
    std::vector<unsigned char> pixels;  // RGB, 1 or 2 bytes per sample (big-endian)
};

struct MemoryReader {
    const unsigned char* data;
    std::size_t size;
    std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (r->pos + n > r->size) png_error(png, "unexpected end of data");
    std::memcpy(out, r->data + r->pos, n);
    r->pos += n;
}

void on_png_error(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<char*>(png_get_error_ptr(png));
    std::snprintf(buf, 256, "%s", msg);
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// Plain C control flow only between setjmp and the last libpng call: no
// C++ objects are constructed in this frame after setjmp.
bool read_png(const unsigned char* data, std::size_t size, PngRaw* out, char* err) {
    if (size < 8 || png_sig_cmp(data, 0, 8) != 0) {
        std::snprintf(err, 256, "not a PNG file");
        return false;
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, on_png_error, on_png_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    MemoryReader reader{data, size, 0};
    std::vector<png_bytep>* rows = new std::vector<png_bytep>();
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        delete rows;
        return false;
    }
    png_set_read_fn(png, &reader, read_from_memory);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    out->width = png_get_image_width(png, info);
    out->height = png_get_image_height(png, info);
    out->bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(out->width) * 3 * (out->bit_depth == 16 ? 2 : 1)) {
        png_error(png, "unsupported pixel layout");
    }
    out->pixels.resize(stride * out->height);
    rows->resize(out->height);
    for (std::size_t y = 0; y < out->height; ++y) (*rows)[y] = out->pixels.data() + y * stride;
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    return true;
}

void write_to_string(png_structp png, png_bytep data, png_size_t n) {
    static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

void flush_noop(png_structp) {}

bool write_png(const unsigned char* rgb, std::uint32_t w, std::uint32_t h, std::string* out, char* err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, on_png_error, on_png_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_set_write_fn(png, out, write_to_string, flush_noop);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < h; ++y) png_write_row(png, rgb + static_cast<std::size_t>(y) * w * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

void check_image(const Image& image, const char* what) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError(std::string(what) + ": expected an (h, w, 3) image, got " + shape_str(image.shape()));
    }
}

struct AxisTaps {
    std::vector<std::size_t> start;  // first tap per output sample
    std::vector<std::size_t> count;
    std::vector<std::size_t> index;  // flattened source indices
    std::vector<double> weight;
};

AxisTaps axis_taps(std::size_t n_in, double origin, double extent, std::size_t n_out) {
    const double step = extent / static_cast<double>(n_out);
    const double widen = std::max(1.0, step);
    const double support = 2.0 * widen;
    AxisTaps taps;
    for (std::size_t o = 0; o < n_out; ++o) {
        const double center = origin + (static_cast<double>(o) + 0.5) * step - 0.5;
        const auto lo = static_cast<std::ptrdiff_t>(std::floor(center - support));
        const auto hi = static_cast<std::ptrdiff_t>(std::ceil(center + support));
        taps.start.push_back(taps.index.size());
        double total = 0.0;
        const std::size_t first = taps.weight.size();
        for (std::ptrdiff_t i = lo; i <= hi; ++i) {
            const double wgt = cubic_kernel((static_cast<double>(i) - center) / widen);
            if (wgt == 0.0) continue;
            const auto src = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n_in) - 1);
            taps.index.push_back(static_cast<std::size_t>(src));
            taps.weight.push_back(wgt);
            total += wgt;
        }
        for (std::size_t k = first; k < taps.weight.size(); ++k) taps.weight[k] /= total;
        taps.count.push_back(taps.weight.size() - first);
    }
    return taps;
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto sn = static_cast<std::ptrdiff_t>(n);
    if (n == 1) return 0;
    while (i < 0 || i >= sn) {
        if (i < 0) i = -i;
        if (i >= sn) i = 2 * sn - 2 - i;
    }
    return static_cast<std::size_t>(i);
}

}  // namespace

Image decode_png(const std::string& bytes) {
    PngRaw raw;
    char err[256] = "invalid PNG data";
    if (!read_png(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), &raw, err)) {
        throw IoError(std::string("cannot decode PNG: ") + err);
    }
    Image img({raw.height, raw.width, 3});
    const std::size_t n = img.numel();
    if (raw.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned v = (static_cast<unsigned>(raw.pixels[2 * i]) << 8) | raw.pixels[2 * i + 1];
            img[i] = static_cast<float>(v / 65535.0);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) img[i] = static_cast<float>(raw.pixels[i] / 255.0);
    }
    return img;
}

Image load_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_png(ss.str());
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::string encode_png(const Image& image) {
    check_image(image, "encode_png");
    std::vector<unsigned char> rgb(image.numel());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        const float v = std::isfinite(image[i]) ? std::clamp(image[i], 0.0f, 1.0f) : 0.0f;
        rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    std::string out;
    char err[256] = "PNG encoding failed";
    if (!write_png(rgb.data(), static_cast<std::uint32_t>(image.dim(1)), static_cast<std::uint32_t>(image.dim(0)),
                   &out, err)) {
        throw IoError(err);
    }
    return out;
}

void save_png(const Image& image, const std::filesystem::path& path) {
    const std::string bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw IoError("cannot write " + path.string());
    }
}

Image crop(const Image& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    check_image(image, "crop");
    if (y + h > image.dim(0) || x + w > image.dim(1)) {
        throw RangeError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(y) + ", " +
                         std::to_string(x) + ") exceeds image " + shape_str(image.shape()));
    }
    Image out({h, w, 3});
    for (std::size_t r = 0; r < h; ++r) {
        std::copy_n(image.data() + ((y + r) * image.dim(1) + x) * 3, w * 3, out.data() + r * w * 3);
    }
    return out;
}

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

Image resample_bicubic(const Image& image, double y0, double x0, double h, double w, std::size_t out_h,
                       std::size_t out_w) {
    check_image(image, "resample_bicubic");
    if (out_h == 0 || out_w == 0 || !(h > 0) || !(w > 0)) throw ShapeError("resample_bicubic: empty output");
    const std::size_t in_h = image.dim(0), in_w = image.dim(1);
    const AxisTaps ty = axis_taps(in_h, y0, h, out_h);
    const AxisTaps tx = axis_taps(in_w, x0, w, out_w);

    // Horizontal pass in double, then vertical.
    std::vector<double> mid(in_h * out_w * 3, 0.0);
    for (std::size_t y = 0; y < in_h; ++y) {
        for (std::size_t o = 0; o < out_w; ++o) {
            double acc[3] = {0, 0, 0};
            for (std::size_t k = tx.start[o]; k < tx.start[o] + tx.count[o]; ++k) {
                const float* p = image.data() + (y * in_w + tx.index[k]) * 3;
                for (int c = 0; c < 3; ++c) acc[c] += tx.weight[k] * p[c];
            }
            for (int c = 0; c < 3; ++c) mid[(y * out_w + o) * 3 + c] = acc[c];
        }
    }
    Image out({out_h, out_w, 3});
    for (std::size_t o = 0; o < out_h; ++o) {
        for (std::size_t x = 0; x < out_w; ++x) {
            double acc[3] = {0, 0, 0};
            for (std::size_t k = ty.start[o]; k < ty.start[o] + ty.count[o]; ++k) {
                const double* p = mid.data() + (ty.index[k] * out_w + x) * 3;
                for (int c = 0; c < 3; ++c) acc[c] += ty.weight[k] * p[c];
            }
            for (int c = 0; c < 3; ++c) out.at(o, x, c) = static_cast<float>(acc[c]);
        }
    }
    return out;
}

Image resize_bicubic(const Image& image, std::size_t out_h, std::size_t out_w) {
    check_image(image, "resize_bicubic");
    return resample_bicubic(image, 0.0, 0.0, static_cast<double>(image.dim(0)), static_cast<double>(image.dim(1)),
                            out_h, out_w);
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
    if (size % 2 == 0 || !(sigma > 0)) throw ConfigError("gaussian taps need an odd size and positive sigma");
    const auto r = static_cast<std::ptrdiff_t>(size / 2);
    std::vector<double> taps;
    double total = 0.0;
    for (std::ptrdiff_t i = -r; i <= r; ++i) {
        taps.push_back(std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma)));
        total += taps.back();
    }
    for (double& t : taps) t /= total;
    return taps;
}

Image gaussian_blur(const Image& image, std::size_t size, double sigma) {
    check_image(image, "gaussian_blur");
    const std::vector<double> taps = gaussian_taps(size, sigma);
    const auto r = static_cast<std::ptrdiff_t>(size / 2);
    const std::size_t h = image.dim(0), w = image.dim(1);
    std::vector<double> mid(h * w * 3, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::ptrdiff_t k = -r; k <= r; ++k) {
                const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x) + k, w);
                for (int c = 0; c < 3; ++c) mid[(y * w + x) * 3 + c] += taps[k + r] * image.at(y, sx, c);
            }
        }
    }
    Image out({h, w, 3});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (std::ptrdiff_t k = -r; k <= r; ++k) {
                const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + k, h);
                for (int c = 0; c < 3; ++c) acc[c] += taps[k + r] * mid[(sy * w + x) * 3 + c];
            }
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(acc[c]);
        }
    }
    return out;
}

Tensor<double> luma(const Image& image) {
    check_image(image, "luma");
    Tensor<double> y({image.dim(0), image.dim(1)});
    for (std::size_t i = 0; i < y.numel(); ++i) {
        y[i] = 0.299 * image[3 * i] + 0.587 * image[3 * i + 1] + 0.114 * image[3 * i + 2];
    }
    return y;
}

}  // namespace iste
