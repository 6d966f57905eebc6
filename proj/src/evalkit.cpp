#include "iste/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "iste/checkpoint.hpp"

namespace iste {

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Valid-mode separable filtering of an (h, w) plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
    const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
    std::vector<double> mid(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += taps[i] * src[y * w + x + i];
            mid[y * ow + x] = acc;
        }
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += taps[i] * mid[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

void put(Image& img, long y, long x, const std::array<float, 3>& c) {
    if (y < 0 || x < 0 || y >= static_cast<long>(img.dim(0)) || x >= static_cast<long>(img.dim(1))) return;
    for (std::size_t ch = 0; ch < 3; ++ch) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) = c[ch];
}

void draw_line(Image& img, double y0, double x0, double y1, double x1, const std::array<float, 3>& c) {
    const double len = std::max(std::abs(y1 - y0), std::abs(x1 - x0));
    const auto steps = static_cast<long>(std::ceil(len)) + 1;
    for (long s = 0; s <= steps; ++s) {
        const double t = steps ? static_cast<double>(s) / static_cast<double>(steps) : 0.0;
        put(img, std::lround(y0 + t * (y1 - y0)), std::lround(x0 + t * (x1 - x0)), c);
    }
}

std::string format_scale(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", s);
    return buf;
}

}  // namespace

double psnr(const Image& pred, const Image& gt) {
    check_pair(pred, gt, "psnr");
    if (pred.numel() == 0) throw ShapeError("psnr: empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(pred.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& pred, const Image& gt, const SsimOptions& opt) {
    check_pair(pred, gt, "ssim");
    const std::size_t h = pred.dim(0), w = pred.dim(1);
    if (h < opt.window || w < opt.window) {
        throw ShapeError("ssim: image " + shape_str(pred.shape()) + " smaller than the " + std::to_string(opt.window) +
                         "x" + std::to_string(opt.window) + " window");
    }
    const std::vector<double> taps = gaussian_taps(opt.window, opt.sigma);
    const Tensor<double> a = luma(pred), b = luma(gt);
    std::vector<double> aa(h * w), bb(h * w), ab(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a.vec(), h, w, taps), mu_b = filter_valid(b.vec(), h, w, taps);
    const auto e_aa = filter_valid(aa, h, w, taps), e_bb = filter_valid(bb, h, w, taps),
               e_ab = filter_valid(ab, h, w, taps);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i], vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + opt.c1) * (2 * cov + opt.c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + opt.c1) * (va + vb + opt.c2));
    }
    return total / static_cast<double>(mu_a.size());
}

Tensor<double> abs_error(const Image& pred, const Image& gt) {
    check_pair(pred, gt, "abs_error");
    Tensor<double> e({pred.dim(0), pred.dim(1)});
    for (std::size_t i = 0; i < e.numel(); ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 3; ++c) acc += std::abs(static_cast<double>(pred[3 * i + c]) - gt[3 * i + c]);
        e[i] = acc / 3.0;
    }
    return e;
}

std::array<float, 3> heat_color(double v) {
    static constexpr double anchors[5][3] = {
        {0.00, 0.00, 0.02}, {0.34, 0.06, 0.43}, {0.73, 0.21, 0.33}, {0.98, 0.55, 0.04}, {0.99, 1.00, 0.64}};
    v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 4.0;
    const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(v));
    const double t = v - static_cast<double>(i);
    std::array<float, 3> c{};
    for (int ch = 0; ch < 3; ++ch) c[ch] = static_cast<float>(anchors[i][ch] + t * (anchors[i + 1][ch] - anchors[i][ch]));
    return c;
}

Image error_image(const Image& pred, const Image& gt, double vmax) {
    const Tensor<double> e = abs_error(pred, gt);
    if (vmax <= 0.0) vmax = e.numel() ? *std::max_element(e.vec().begin(), e.vec().end()) : 0.0;
    Image out({e.dim(0), e.dim(1), 3});
    for (std::size_t i = 0; i < e.numel(); ++i) {
        const auto c = heat_color(vmax > 0.0 ? e[i] / vmax : 0.0);
        std::copy(c.begin(), c.end(), out.data() + 3 * i);
    }
    return out;
}

void error_map(const Image& pred, const Image& gt, const std::filesystem::path& path, double vmax) {
    save_png(error_image(pred, gt, vmax), path);
}

std::vector<Arrow> select_arrows(const std::vector<std::size_t>& index, const std::vector<double>& confidence,
                                 double fraction) {
    if (index.size() != confidence.size()) throw ShapeError("retrieval map: index and confidence lengths differ");
    const std::size_t n = index.size();
    const auto k = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
    std::vector<Arrow> arrows;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = order[r];
        if (index[i] != i) arrows.push_back({index[i], i, confidence[i]});
    }
    return arrows;
}

std::vector<Arrow> retrieval_map(const std::vector<std::size_t>& index, const std::vector<double>& confidence,
                                 std::size_t h, std::size_t w, const RetrievalMapPaths& paths, double fraction) {
    if (index.size() != h * w) throw ShapeError("retrieval map: grid does not match the number of queries");
    for (std::size_t t : index) {
        if (t >= h * w) throw RangeError("retrieval map: source index outside the grid");
    }
    const std::vector<Arrow> arrows = select_arrows(index, confidence, fraction);
    const std::size_t f = std::max<std::size_t>(1, 512 / std::max(h, w));

    Image heat({h * f, w * f, 3});
    Image plot({h * f, w * f, 3}, 0.92f);
    for (std::size_t y = 0; y < h * f; ++y)
        for (std::size_t x = 0; x < w * f; ++x) {
            const auto c = heat_color((confidence[(y / f) * w + x / f] + 1.0) / 2.0);
            std::copy(c.begin(), c.end(), heat.data() + (y * w * f + x) * 3);
        }
    const std::array<float, 3> blue{0.1f, 0.25f, 0.9f};
    const double half = static_cast<double>(f) / 2.0;
    for (const Arrow& a : arrows) {
        const double y0 = static_cast<double>((a.from / w) * f) + half, x0 = static_cast<double>((a.from % w) * f) + half;
        const double y1 = static_cast<double>((a.to / w) * f) + half, x1 = static_cast<double>((a.to % w) * f) + half;
        draw_line(plot, y0, x0, y1, x1, blue);
        const double len = std::hypot(y1 - y0, x1 - x0), head = std::min(len / 3.0, 2.0 + half);
        const double uy = (y0 - y1) / len, ux = (x0 - x1) / len;
        for (double s : {-0.5, 0.5}) {
            const double ry = uy * std::cos(s) - ux * std::sin(s), rx = uy * std::sin(s) + ux * std::cos(s);
            draw_line(plot, y1, x1, y1 + head * ry, x1 + head * rx, blue);
        }
    }
    save_png(plot, paths.arrows);
    save_png(heat, paths.heatmap);
    return arrows;
}

Image bicubic_upscale(const Image& image, double m) {
    if (!(m >= 1.0)) throw RangeError("bicubic_upscale: scale must be >= 1");
    return resize_bicubic(image, scaled_extent(image.dim(0), m), scaled_extent(image.dim(1), m));
}

EvalPair make_eval_pair(const Image& image, double m, const DegradeConfig& cfg, std::uint64_t seed) {
    if (!(m >= 1.0)) throw RangeError("make_eval_pair: scale must be >= 1");
    const auto lr_h = static_cast<std::size_t>(std::floor(static_cast<double>(image.dim(0)) / m));
    const auto lr_w = static_cast<std::size_t>(std::floor(static_cast<double>(image.dim(1)) / m));
    if (lr_h < 8 || lr_w < 8) throw ShapeError("make_eval_pair: image too small for scale " + format_scale(m));
    const std::size_t hr_h = std::min(image.dim(0), scaled_extent(lr_h, m));
    const std::size_t hr_w = std::min(image.dim(1), scaled_extent(lr_w, m));
    std::mt19937_64 rng(seed);
    const std::size_t y = uniform_index(rng, image.dim(0) - hr_h + 1), x = uniform_index(rng, image.dim(1) - hr_w + 1);
    EvalPair p;
    p.hr = crop(image, y, x, hr_h, hr_w);
    p.lr = degrade_patch(p.hr, lr_h, lr_w, cfg);
    return p;
}

std::string EvalReport::csv() const {
    std::ostringstream os;
    os << "scale,metric,value,n_images,checkpoint_hash\n";
    for (const ReportRow& r : rows) {
        char value[64];
        std::snprintf(value, sizeof(value), "%.6f", r.value);
        os << format_scale(r.scale) << ',' << r.metric << ',' << value << ',' << r.n_images << ','
           << r.checkpoint_hash << '\n';
    }
    return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << csv())) throw IoError("cannot write " + path.string());
}

double EvalReport::value(double scale, const std::string& metric) const {
    for (const ReportRow& r : rows)
        if (r.scale == scale && r.metric == metric) return r.value;
    throw RangeError("report has no " + metric + " row at scale " + format_scale(scale));
}

namespace {

template <typename Predict>
EvalReport run_eval(const std::vector<Image>& images, const EvalOptions& opt, const std::string& hash,
                    const std::string& tag, Predict&& predict) {
    if (images.empty()) throw ConfigError("evaluate: no images");
    EvalReport report;
    for (std::size_t s = 0; s < opt.scales.size(); ++s) {
        const double m = opt.scales[s];
        double sum_psnr = 0.0, sum_ssim = 0.0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            const EvalPair pair = make_eval_pair(images[i], m, opt.degrade, derive_seed(opt.seed, i));
            const Image pred = predict(pair.lr, m);
            sum_psnr += psnr(pred, pair.hr);
            sum_ssim += ssim(pred, pair.hr);
            if (opt.artifact_dir) {
                const auto path = *opt.artifact_dir / (tag + "_x" + format_scale(m) + "_" + std::to_string(i) + ".png");
                error_map(pred, pair.hr, path);
                report.artifacts.push_back(path);
            }
        }
        const auto n = static_cast<double>(images.size());
        report.rows.push_back({m, "psnr", sum_psnr / n, images.size(), hash});
        report.rows.push_back({m, "ssim", sum_ssim / n, images.size(), hash});
    }
    return report;
}

}  // namespace

EvalReport evaluate(const IsteModel<float>& model, const std::string& checkpoint_hash,
                    const std::vector<Image>& images, const EvalOptions& opt) {
    return run_eval(images, opt, checkpoint_hash, "error",
                    [&](const Image& lr, double m) { return model.predict_image(lr, m); });
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Image>& images,
                    const EvalOptions& opt) {
    if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
    const IsteModel<float> model = IsteModel<float>::load(checkpoint);
    return evaluate(model, nn::hash_hex(nn::file_hash(checkpoint)), images, opt);
}

EvalReport evaluate_bicubic(const std::vector<Image>& images, const EvalOptions& opt) {
    return run_eval(images, opt, "bicubic", "bicubic_error",
                    [](const Image& lr, double m) { return bicubic_upscale(lr, m); });
}

}  // namespace iste
