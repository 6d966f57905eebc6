#include "iste/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

namespace iste {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Corpus load_corpus(const std::filesystem::path& dir, std::size_t min_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    Corpus corpus;
    for (const auto& f : files) {
        try {
            Image img = load_png(f);
            if (img.dim(0) < min_size || img.dim(1) < min_size) {
                corpus.skipped.push_back(f.filename().string() + ": smaller than " + std::to_string(min_size) + "x" +
                                         std::to_string(min_size));
                continue;
            }
            corpus.names.push_back(f.filename().string());
            corpus.images.push_back(std::move(img));
        } catch (const IoError& e) {
            corpus.skipped.push_back(f.filename().string() + ": " + e.what());
        }
    }
    for (const auto& s : corpus.skipped) std::cerr << "warning: skipped " << s << "\n";
    if (corpus.images.empty()) throw ConfigError("no usable PNG images in " + dir.string());
    return corpus;
}

namespace {

double smoothstep(double e0, double e1, double v) {
    const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Wave {
    double kx, ky, phase, amp;
    double tint[3];
};

struct Cell {
    double cy, cx, ra, rb, cos_t, sin_t;
    double color[3];
    Wave chromatin;
};

Wave random_wave(std::mt19937_64& rng, double min_period, double max_period, double amp_lo, double amp_hi) {
    const double period = min_period * std::pow(max_period / min_period, uniform01(rng));
    const double theta = uniform01(rng) * std::numbers::pi;
    const double k = 2.0 * std::numbers::pi / period;
    Wave w{k * std::cos(theta), k * std::sin(theta), uniform01(rng) * 2.0 * std::numbers::pi,
           amp_lo + (amp_hi - amp_lo) * uniform01(rng), {0, 0, 0}};
    for (double& t : w.tint) t = 0.6 + 0.4 * uniform01(rng);
    return w;
}

double wave_at(const Wave& w, double y, double x) { return w.amp * std::sin(w.kx * x + w.ky * y + w.phase); }

Image synth_image(std::size_t size, std::mt19937_64& rng) {
    const double base[3] = {0.86 + 0.08 * uniform01(rng), 0.66 + 0.12 * uniform01(rng), 0.78 + 0.1 * uniform01(rng)};
    std::vector<Wave> background;
    background.push_back(random_wave(rng, 24.0, 64.0, 0.04, 0.07));
    background.push_back(random_wave(rng, 10.0, 24.0, 0.025, 0.05));
    background.push_back(random_wave(rng, 5.0, 10.0, 0.015, 0.03));

    const auto area = static_cast<double>(size * size);
    const std::size_t n_cells = 4 + static_cast<std::size_t>(area / 2400.0 * (0.5 + 0.5 * uniform01(rng)));
    std::vector<Cell> cells;
    for (std::size_t i = 0; i < n_cells; ++i) {
        Cell c{};
        c.cy = uniform01(rng) * static_cast<double>(size);
        c.cx = uniform01(rng) * static_cast<double>(size);
        c.ra = 5.0 + 9.0 * uniform01(rng);
        c.rb = c.ra * (0.55 + 0.4 * uniform01(rng));
        const double t = uniform01(rng) * std::numbers::pi;
        c.cos_t = std::cos(t);
        c.sin_t = std::sin(t);
        const double dark = 0.15 + 0.2 * uniform01(rng);
        c.color[0] = dark + 0.15 * uniform01(rng);
        c.color[1] = dark * 0.6;
        c.color[2] = dark + 0.25 + 0.1 * uniform01(rng);
        c.chromatin = random_wave(rng, 3.5, 7.0, 0.04, 0.08);
        cells.push_back(c);
    }

    Image img({size, size, 3});
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
            double rgb[3];
            for (int ch = 0; ch < 3; ++ch) rgb[ch] = base[ch];
            for (const Wave& w : background) {
                const double v = wave_at(w, py, px);
                for (int ch = 0; ch < 3; ++ch) rgb[ch] += v * w.tint[ch];
            }
            for (const Cell& c : cells) {
                const double dy = py - c.cy, dx = px - c.cx;
                const double u = c.cos_t * dx + c.sin_t * dy, v = -c.sin_t * dx + c.cos_t * dy;
                const double q = std::sqrt((u / c.ra) * (u / c.ra) + (v / c.rb) * (v / c.rb));
                const double dist = (q - 1.0) * c.rb;  // approximate edge distance in pixels
                if (dist > 2.0) continue;
                const double alpha = 1.0 - smoothstep(-1.5, 1.5, dist);
                const double tex = wave_at(c.chromatin, py, px);
                for (int ch = 0; ch < 3; ++ch) {
                    const double cell = c.color[ch] + tex * c.chromatin.tint[ch];
                    rgb[ch] = (1.0 - alpha) * rgb[ch] + alpha * cell;
                }
            }
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(std::clamp(rgb[ch], 0.0, 1.0));
        }
    }
    return img;
}

}  // namespace

std::vector<Image> synth_corpus(std::size_t n, std::size_t size, std::uint64_t seed) {
    if (size < 192) throw ConfigError("synth_corpus: size must be at least 192, got " + std::to_string(size));
    std::vector<Image> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(derive_seed(seed, i));
        out.push_back(synth_image(size, rng));
    }
    return out;
}

void write_corpus(const std::vector<Image>& images, const std::filesystem::path& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04zu.png", prefix.c_str(), i);
        save_png(images[i], dir / name);
    }
}

Image degrade_patch(const Image& hr_patch, std::size_t lr_h, std::size_t lr_w, const DegradeConfig& cfg) {
    return gaussian_blur(resize_bicubic(hr_patch, lr_h, lr_w), cfg.blur_kernel, cfg.blur_sigma);
}

DegradedPair degrade(const Image& hr_image, double m, const DegradeConfig& cfg, std::mt19937_64& rng) {
    if (!(m >= 1.0)) throw RangeError("degrade: scale must be >= 1");
    const std::size_t side = scaled_extent(cfg.patch, m);
    if (hr_image.dim(0) < side || hr_image.dim(1) < side) {
        throw ShapeError("degrade: scale " + std::to_string(m) + " needs an image of at least " + std::to_string(side) +
                         "x" + std::to_string(side) + ", got " + shape_str(hr_image.shape()));
    }
    DegradedPair p;
    p.crop_y = uniform_index(rng, hr_image.dim(0) - side + 1);
    p.crop_x = uniform_index(rng, hr_image.dim(1) - side + 1);
    p.hr = crop(hr_image, p.crop_y, p.crop_x, side, side);
    p.lr = degrade_patch(p.hr, cfg.patch, cfg.patch, cfg);
    return p;
}

SampledPairs sample_pairs(const Image& hr_patch, std::size_t lr_h, std::size_t lr_w, std::size_t k,
                          std::mt19937_64& rng) {
    const std::size_t hr_h = hr_patch.dim(0), hr_w = hr_patch.dim(1), total = hr_h * hr_w;
    if (k > total) {
        throw ConfigError("sample_pairs: " + std::to_string(k) + " samples requested from " + std::to_string(total) +
                          " pixels");
    }
    // Partial Fisher-Yates shuffle.
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, total - i)]);
    idx.resize(k);

    const std::vector<double> cy = pixel_centers(hr_h), cx = pixel_centers(hr_w);
    std::vector<Point2> coords(k);
    SampledPairs out;
    out.rgb = Tensor<float>({k, 3});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t y = idx[i] / hr_w, x = idx[i] % hr_w;
        coords[i] = {cy[y], cx[x]};
        for (std::size_t c = 0; c < 3; ++c) out.rgb.at(i, c) = hr_patch.at(y, x, c);
    }
    out.coords = make_coord_set(lr_h, lr_w, hr_h, hr_w, std::move(coords));
    out.pixels = std::move(idx);
    return out;
}

}  // namespace iste
